use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn emesh(args: &[&str], seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_emesh"));
    c.args(args).env_remove("EMESH_SEED");
    if let Some(s) = seed {
        c.env("EMESH_SEED", s);
    }
    c.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn bundled(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{ "name": "small", "mesh": { "rows": 4, "cols": 4 },
  "traffic": { "kind": "UNIFORM_RANDOM", "rate": 0.2 }, "seed": 5, "warmup": 20, "window": 200 }"#;

#[test]
fn every_bundled_config_validates() {
    for entry in std::fs::read_dir(bundled("")).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if name.ends_with(".scripts.json") {
            continue;
        }
        let out = emesh(&["validate", "--config", p.to_str().unwrap()], None);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn specs_prints_a_summary_without_out() {
    let out = emesh(&["specs"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1536"), "{text}");
}

#[test]
fn run_writes_json_csv_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let json = dir.path().join("r.json");
    let trace = dir.path().join("t.log");
    let out = emesh(&["run", "--config", &cfg, "--out", json.to_str().unwrap(), "--trace", trace.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(report["kind"], "stats");
    assert_eq!(report["seed"], 5);
    assert!(!std::fs::read_to_string(&trace).unwrap().is_empty());

    let csv = dir.path().join("r.csv");
    assert!(emesh(&["run", "--config", &cfg, "--out", csv.to_str().unwrap()], None).status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let json = dir.path().join("r.json");
    assert!(emesh(&["run", "--config", &cfg, "--out", json.to_str().unwrap()], Some("0x2a")).status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(report["seed"], 42);
    let bad = emesh(&["validate", "--config", &cfg], Some("forty-two"));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_errors_carry_location_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"name\": \"x\",\n  \"mesh\": { \"rows\": 4, \"cols\": 4 },\n  \"colour\": 1\n}");
    let out = emesh(&["validate", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:4:"), "{err}");
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn failed_run_writes_no_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{ "name": "s", "mesh": { "rows": 2, "cols": 2 }, "scripts": "missing.scripts.json" }"#,
    );
    let json = dir.path().join("r.json");
    let out = emesh(&["run", "--config", &cfg, "--out", json.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(!json.exists());
}

#[test]
fn sweep_reports_one_point_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let json = dir.path().join("s.json");
    let out = emesh(&["sweep", "--config", &cfg, "--rates", "0.1:0.3:0.1", "--out", json.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 3);
    assert_eq!(emesh(&["sweep", "--config", &cfg, "--rates", "0.5:0.1:0.1"], None).status.code(), Some(2));
}

#[test]
fn litmus_with_few_trials() {
    let out = emesh(&["litmus", "--config", &bundled("litmus_table1.json"), "--trials", "10"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}
