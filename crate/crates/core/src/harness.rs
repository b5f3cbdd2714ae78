//! Run configuration, experiment orchestration and report output.

use crate::addrmap::{encode_address, AddressLayout, GlobalAddress, NodeCoord};
use crate::error::{Error, Result};
use crate::machine::{Machine, MachineConfig};
use crate::metrics::{measure_latency, spec_metrics, window_report, ReportMeta, SpecConfig, SpecMetrics, StatsReport, WindowStart};
use crate::multichip::SLICES_PER_SIDE;
use crate::node::traffic::TrafficPattern;
use crate::node::{NodeConfig, OpKind, ScriptOp, TransactionScript};
use crate::noc::{FabricConfig, TraceRecord};
use crate::ordering::{run_table, TableReport};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "EMESH_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshDims {
    pub rows: u32,
    pub cols: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipDims {
    pub x: u32,
    pub y: u32,
}

impl Default for ChipDims {
    fn default() -> Self {
        Self { x: 1, y: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LitmusConfig {
    pub trials: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mesh: MeshDims,
    #[serde(default)]
    pub chips: ChipDims,
    #[serde(default)]
    pub layout: AddressLayout,
    #[serde(default)]
    pub fabric: FabricConfig,
    #[serde(default)]
    pub node: NodeConfig,
    /// Synthetic traffic. Its seed is replaced by the run seed.
    #[serde(default)]
    pub traffic: Option<TrafficPattern>,
    /// Script file, relative to the config file.
    #[serde(default)]
    pub scripts: Option<PathBuf>,
    #[serde(default)]
    pub litmus: Option<LitmusConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    #[serde(default = "default_window")]
    pub window: u64,
    /// Cycles allowed for the fabric to empty once generation stops.
    #[serde(default = "default_drain")]
    pub drain: u64,
    #[serde(default)]
    pub check_conservation: bool,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_warmup() -> u64 {
    2_000
}
fn default_window() -> u64 {
    10_000
}
fn default_drain() -> u64 {
    10_000
}

/// One op of a script file. Targets are given by node and offset; a
/// missing node means the issuing node itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptOpSpec {
    pub op: OpKind,
    #[serde(default)]
    pub node: Option<NodeCoord>,
    pub offset: u32,
    #[serde(default)]
    pub data: u64,
    #[serde(default = "eight")]
    pub size: u8,
    #[serde(default)]
    pub blocking: Option<bool>,
    /// Return location of a read; the issuing node when absent.
    #[serde(default)]
    pub return_node: Option<NodeCoord>,
    #[serde(default)]
    pub return_offset: u32,
}

fn eight() -> u8 {
    8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeScript {
    pub node: NodeCoord,
    #[serde(default)]
    pub start_cycle: u64,
    pub ops: Vec<ScriptOpSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    pub scripts: Vec<NodeScript>,
}

impl NodeScript {
    pub fn to_script(&self, layout: AddressLayout, blocking_default: bool) -> Result<TransactionScript> {
        let at = |n: Option<NodeCoord>, off: u32| -> Result<GlobalAddress> {
            let target = n.unwrap_or(self.node);
            if layout.local_alias && target == NodeCoord::new(0, 0) && self.node != target {
                return Err(Error::Config(format!(
                    "script for {}: node (0,0) has an all-zero coordinate field, which aliases the issuer; disable local_alias to reach it",
                    self.node
                )));
            }
            Ok(encode_address(target, off, layout)?)
        };
        let ops = self
            .ops
            .iter()
            .map(|s| {
                Ok(ScriptOp {
                    op: s.op,
                    addr: at(s.node, s.offset)?,
                    data: if s.op == OpKind::RemoteRead { at(s.return_node, s.return_offset)?.raw() } else { s.data },
                    size: s.size,
                    blocking: s.blocking.unwrap_or(blocking_default),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransactionScript { ops, start_cycle: self.start_cycle })
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn load_script_file(path: &Path) -> Result<ScriptFile> {
    serde_json::from_str(&read_file(path)?).map_err(|e| json_error(path, e))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| json_error(origin, e))?;
        if let Some(s) = &cfg.scripts {
            if s.is_relative() {
                let dir = origin.parent().unwrap_or(Path::new("."));
                cfg.scripts = Some(dir.join(s));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?, path)
    }

    pub fn grid_rows(&self) -> u32 {
        self.mesh.rows * self.chips.y
    }

    pub fn grid_cols(&self) -> u32 {
        self.mesh.cols * self.chips.x
    }

    fn fail(&self, msg: impl std::fmt::Display) -> Error {
        Error::Config(format!("{}: {msg}", self.name))
    }

    /// Checks everything that can be checked without building the simulator.
    pub fn validate(&self) -> Result<()> {
        if self.mesh.rows == 0 || self.mesh.cols == 0 {
            return Err(self.fail(format!("mesh must be at least 1x1, got {}x{}", self.mesh.rows, self.mesh.cols)));
        }
        if self.chips.x == 0 || self.chips.y == 0 {
            return Err(self.fail("chip array must be at least 1x1"));
        }
        if (self.chips.x > 1 && self.mesh.rows > SLICES_PER_SIDE) || (self.chips.y > 1 && self.mesh.cols > SLICES_PER_SIDE) {
            return Err(self.fail(format!("a chip edge longer than {SLICES_PER_SIDE} nodes cannot be linked")));
        }
        self.layout.validate().map_err(|e| self.fail(e))?;
        let far = NodeCoord::new(self.grid_cols() - 1, self.grid_rows() - 1);
        if !self.layout.fits(far) {
            return Err(self.fail(format!("address layout cannot encode node {far}")));
        }
        self.fabric.link.validate().map_err(|e| self.fail(e))?;
        self.node.budget.validate().map_err(|e| self.fail(e))?;
        if self.node.reply_queue_depth == 0 || self.fabric.inject_depth == 0 {
            return Err(self.fail("queue depths must be at least 1"));
        }
        if let Some(t) = &self.traffic {
            t.validate(self.grid_rows(), self.grid_cols()).map_err(|e| self.fail(e))?;
        }
        if self.window == 0 {
            return Err(self.fail("window must be at least one cycle"));
        }
        if let Some(l) = &self.litmus {
            if l.trials == 0 {
                return Err(self.fail("litmus trials must be at least 1"));
            }
        }
        if let Some(path) = &self.scripts {
            let file = load_script_file(path)?;
            for s in &file.scripts {
                if s.node.z != 0 || s.node.x >= self.grid_cols() || s.node.y >= self.grid_rows() {
                    return Err(self.fail(format!("script node {} is off the grid", s.node)));
                }
                s.to_script(self.layout, self.node.blocking_reads)?;
            }
        }
        Ok(())
    }

    /// Applies `EMESH_SEED` if set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_seed(&v).ok_or_else(|| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn machine_config(&self) -> MachineConfig {
        MachineConfig {
            fabric: FabricConfig { trace: self.trace, ..self.fabric },
            node: self.node,
            log: false,
            check_conservation: self.check_conservation,
        }
    }

    pub fn build_machine(&self) -> Result<Machine> {
        Machine::array(self.chips.x, self.chips.y, self.mesh.rows, self.mesh.cols, self.layout, self.machine_config())
    }

    pub fn pattern(&self) -> Option<TrafficPattern> {
        self.traffic.map(|t| TrafficPattern { seed: self.seed, ..t })
    }
}

pub fn parse_seed(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Parses `start:stop:step` into the inclusive list of rates.
pub fn parse_rates(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("rates {text:?} must look like start:stop:step"));
    let parts: Vec<f64> = text.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [a, b, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || b < a {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as u64 + 1;
    let rates: Vec<f64> = (0..n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect();
    if rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::Config(format!("rates {text:?} leave (0, 1]")));
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LitmusReport {
    pub name: String,
    pub seed: u64,
    pub trials: u64,
    pub table: TableReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Stats(StatsReport),
    Litmus(LitmusReport),
    Sweep { name: String, points: Vec<StatsReport> },
    Specs { config: SpecConfig, metrics: SpecMetrics },
}

impl Report {
    /// False when the run observed something it should not have.
    pub fn passed(&self) -> bool {
        match self {
            Report::Stats(s) => s.errors.capacity_violations == 0 && s.drained != Some(false),
            Report::Litmus(l) => l.table.status != crate::ordering::RowStatus::Fail,
            Report::Sweep { points, .. } => points.iter().all(|s| s.errors.capacity_violations == 0),
            Report::Specs { .. } => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub trace: Vec<TraceRecord>,
}

/// FNV-1a over every scratchpad in raster order.
pub fn memory_digest(m: &Machine) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for mem in m.memories() {
        for b in mem {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    if let Some(l) = cfg.litmus {
        let table = run_table(l.trials, cfg.seed)?;
        return Ok(RunOutput {
            report: Report::Litmus(LitmusReport { name: cfg.name.clone(), seed: cfg.seed, trials: l.trials, table }),
            trace: Vec::new(),
        });
    }
    let mut m = cfg.build_machine()?;
    if let Some(path) = &cfg.scripts {
        for s in load_script_file(path)?.scripts {
            m.load_script(s.node, s.to_script(cfg.layout, cfg.node.blocking_reads)?)?;
        }
    }
    let pattern = cfg.pattern();
    if let Some(p) = pattern {
        m.set_pattern(p)?;
    }
    m.run_cycles(cfg.warmup)?;
    let start = WindowStart::begin(&mut m);
    m.run_cycles(cfg.window)?;
    let meta = ReportMeta {
        name: cfg.name.clone(),
        seed: cfg.seed,
        pattern: pattern.map(|p| p.kind),
        rate: pattern.map_or(0.0, |p| p.rate),
        warmup: cfg.warmup,
    };
    let mut report = window_report(&m, &start, meta);
    let before = m.cycle();
    let drained = m.run_until_quiescent(cfg.drain)?;
    report.drained = Some(drained);
    report.drain_cycles = Some(m.cycle() - before);
    report.memory_digest = Some(memory_digest(&m));
    Ok(RunOutput {
        report: Report::Stats(report),
        trace: m.array.fabric.take_trace(),
    })
}

/// One measurement per rate, each on a fresh machine.
pub fn run_sweep(cfg: &RunConfig, rates: &[f64]) -> Result<Report> {
    let pattern = cfg.pattern().ok_or_else(|| Error::Config(format!("{}: a sweep needs a traffic pattern", cfg.name)))?;
    let mut points = measure_latency(|| cfg.build_machine(), pattern, rates, cfg.warmup, cfg.window)?;
    for p in &mut points {
        p.name = cfg.name.clone();
    }
    Ok(Report::Sweep { name: cfg.name.clone(), points })
}

/// Analytic figures for the configured grid, or the 1024-core default.
pub fn run_specs(cfg: Option<&RunConfig>) -> Report {
    let config = match cfg {
        Some(c) => SpecConfig::for_mesh(c.grid_rows(), c.grid_cols()),
        None => SpecConfig::default(),
    };
    Report::Specs { config, metrics: spec_metrics(&config) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl Format {
    pub fn from_path(p: &Path) -> Self {
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("txt") => Format::Text,
            _ => Format::Json,
        }
    }
}

const STATS_COLUMNS: [&str; 33] = [
    "name",
    "seed",
    "rows",
    "cols",
    "chips_x",
    "chips_y",
    "pattern",
    "rate",
    "warmup",
    "window",
    "offered",
    "injected_rmesh",
    "injected_cmesh",
    "injected_xmesh",
    "delivered_rmesh",
    "delivered_cmesh",
    "delivered_xmesh",
    "delivered_bytes_per_cycle",
    "latency_min",
    "latency_mean",
    "latency_p99",
    "latency_max",
    "util_mean_cmesh",
    "util_max_cmesh",
    "cut_rmesh",
    "cut_cmesh",
    "cut_xmesh",
    "cut_capacity",
    "bad_offset",
    "receive_refusals",
    "send_refusals",
    "drained",
    "memory_digest",
];

fn stats_row(s: &StatsReport) -> Vec<String> {
    let opt = |o: Option<String>| o.unwrap_or_default();
    vec![
        s.name.clone(),
        s.seed.to_string(),
        s.rows.to_string(),
        s.cols.to_string(),
        s.chips_x.to_string(),
        s.chips_y.to_string(),
        opt(s.pattern.map(|p| serde_json::to_value(p).map(|v| v.as_str().unwrap_or_default().to_string()).unwrap_or_default())),
        s.rate.to_string(),
        s.warmup.to_string(),
        s.window.to_string(),
        s.offered.to_string(),
        s.injected.rmesh.to_string(),
        s.injected.cmesh.to_string(),
        s.injected.xmesh.to_string(),
        s.delivered.rmesh.to_string(),
        s.delivered.cmesh.to_string(),
        s.delivered.xmesh.to_string(),
        s.delivered_bytes_per_cycle.to_string(),
        s.latency.min.to_string(),
        s.latency.mean.to_string(),
        s.latency.p99.to_string(),
        s.latency.max.to_string(),
        s.link_utilization.cmesh.mean.to_string(),
        s.link_utilization.cmesh.max.to_string(),
        s.cut_bytes_per_cycle.rmesh.to_string(),
        s.cut_bytes_per_cycle.cmesh.to_string(),
        s.cut_bytes_per_cycle.xmesh.to_string(),
        s.cut_capacity_bytes_per_cycle.to_string(),
        s.errors.bad_offset.to_string(),
        s.errors.receive_refusals.to_string(),
        s.errors.send_refusals.to_string(),
        opt(s.drained.map(|d| d.to_string())),
        opt(s.memory_digest.clone()),
    ]
}

fn csv_bytes(report: &Report) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match report {
        Report::Stats(s) => {
            w.write_record(STATS_COLUMNS)?;
            w.write_record(stats_row(s))?;
        }
        Report::Sweep { points, .. } => {
            w.write_record(STATS_COLUMNS)?;
            for p in points {
                w.write_record(stats_row(p))?;
            }
        }
        Report::Litmus(l) => {
            w.write_record(["row", "first", "second", "deterministic", "trials", "preserved", "reversed", "stale_reads", "value_anomalies", "status"])?;
            for r in &l.table.rows {
                let o = r.observed;
                w.write_record([
                    r.row.to_string(),
                    r.first.to_string(),
                    r.second.to_string(),
                    r.deterministic.to_string(),
                    o.trials.to_string(),
                    o.preserved.to_string(),
                    o.reversed.to_string(),
                    o.stale_reads.to_string(),
                    o.value_anomalies.to_string(),
                    r.status.to_string(),
                ])?;
            }
        }
        Report::Specs { metrics: m, .. } => {
            w.write_record(["dp_flops_per_cycle", "sp_flops_per_cycle", "memory_bytes_per_cycle", "bisection_bytes_per_cycle", "io_bytes_per_io_clock"])?;
            w.write_record([
                m.dp_flops_per_cycle.to_string(),
                m.sp_flops_per_cycle.to_string(),
                m.memory_bytes_per_cycle.to_string(),
                m.bisection_bytes_per_cycle.to_string(),
                m.io_bytes_per_io_clock.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn stats_text(out: &mut String, s: &StatsReport) {
    let _ = writeln!(
        out,
        "{} {}x{} chips {}x{} rate {} window {}: delivered {:.3} B/cycle, cut r/c/x {:.3}/{:.3}/{:.3} of {:.0} B/cycle per plane, latency mean {:.2} p99 {:.1} max {:.1} cycles",
        s.name,
        s.rows,
        s.cols,
        s.chips_x,
        s.chips_y,
        s.rate,
        s.window,
        s.delivered_bytes_per_cycle,
        s.cut_bytes_per_cycle.rmesh,
        s.cut_bytes_per_cycle.cmesh,
        s.cut_bytes_per_cycle.xmesh,
        s.cut_capacity_bytes_per_cycle,
        s.latency.mean,
        s.latency.p99,
        s.latency.max,
    );
}

pub fn text_summary(report: &Report) -> String {
    let mut out = String::new();
    match report {
        Report::Stats(s) => {
            stats_text(&mut out, s);
            if let (Some(d), Some(c)) = (s.drained, s.drain_cycles) {
                let _ = writeln!(out, "drained: {d} after {c} cycles");
            }
        }
        Report::Sweep { points, .. } => points.iter().for_each(|p| stats_text(&mut out, p)),
        Report::Litmus(l) => {
            for r in &l.table.rows {
                let _ = writeln!(
                    out,
                    "row {} {} -> {} deterministic={} {} ({})",
                    r.row, r.first, r.second, r.deterministic, r.status, r.note
                );
            }
            let _ = writeln!(out, "table: {}", l.table.status);
        }
        Report::Specs { metrics: m, .. } => {
            let _ = writeln!(out, "DP FLOPS/cycle            {}", m.dp_flops_per_cycle);
            let _ = writeln!(out, "SP FLOPS/cycle            {}", m.sp_flops_per_cycle);
            let _ = writeln!(out, "memory bytes/cycle        {}", m.memory_bytes_per_cycle);
            let _ = writeln!(out, "NoC bisection bytes/cycle {}", m.bisection_bytes_per_cycle);
            let _ = writeln!(out, "IO bytes/IO clock         {}", m.io_bytes_per_io_clock);
        }
    }
    out
}

pub fn render(report: &Report, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => csv_bytes(report)?,
        Format::Text => text_summary(report).into_bytes(),
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn emit_report(report: &Report, format: Format, path: &Path) -> Result<()> {
    write_file(path, &render(report, format)?)
}

pub fn render_trace(trace: &[TraceRecord]) -> String {
    let mut s = String::with_capacity(trace.len() * 48);
    for r in trace {
        let _ = writeln!(s, "{r}");
    }
    s
}
