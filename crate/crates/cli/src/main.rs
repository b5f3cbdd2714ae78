use clap::{Parser, Subcommand};
use emesh_core::harness::{
    emit_report, parse_rates, render, render_trace, run_experiment, run_specs, run_sweep, write_file, Format, LitmusConfig, Report,
    RunConfig,
};
use emesh_core::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "emesh", version, about = "Cycle-level Epiphany-V fabric simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the analytic performance figures.
    Specs {
        /// Derive the figures from this config's grid instead of the 1024-core default.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path; `.csv` and `.txt` select those formats, anything else is JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the packet trace here (turns tracing on).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the ordering litmus suite.
    Litmus {
        #[arg(long)]
        config: PathBuf,
        /// Randomized trials per table row.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the offered rate of the config's traffic pattern.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// start:stop:step, inclusive.
        #[arg(long)]
        rates: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env_seed()?;
    Ok(cfg)
}

/// Writes the report (and trace) only once everything succeeded.
fn finish(report: &Report, out: Option<&Path>, trace: Option<(&Path, String)>) -> Result<bool, Error> {
    if let Some((path, text)) = trace {
        write_file(path, text.as_bytes())?;
    }
    match out {
        Some(p) => emit_report(report, Format::from_path(p), p)?,
        None => print!("{}", String::from_utf8_lossy(&render(report, Format::Text)?)),
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Specs { config, out } => {
            let cfg = config.as_deref().map(load).transpose()?;
            finish(&run_specs(cfg.as_ref()), out.as_deref(), None)
        }
        Command::Run { config, out, trace } => {
            let mut cfg = load(&config)?;
            let trace = trace.or(cfg.output.trace.clone());
            cfg.trace |= trace.is_some();
            let result = run_experiment(&cfg)?;
            let out = out.or(cfg.output.report.clone());
            let trace_text = trace.as_deref().map(|p| (p, render_trace(&result.trace)));
            if let Some(csv) = &cfg.output.csv {
                emit_report(&result.report, Format::Csv, csv)?;
            }
            finish(&result.report, out.as_deref(), trace_text)
        }
        Command::Litmus { config, trials, out } => {
            let mut cfg = load(&config)?;
            let trials = trials.or(cfg.litmus.map(|l| l.trials)).unwrap_or(10_000);
            cfg.litmus = Some(LitmusConfig { trials });
            cfg.validate()?;
            let result = run_experiment(&cfg)?;
            finish(&result.report, out.as_deref(), None)
        }
        Command::Sweep { config, rates, out } => {
            let cfg = load(&config)?;
            let rates = parse_rates(&rates)?;
            finish(&run_sweep(&cfg, &rates)?, out.as_deref(), None)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}: ok", cfg.name);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("emesh: run finished with a failed check");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("emesh: {e}");
            ExitCode::from(2)
        }
    }
}
