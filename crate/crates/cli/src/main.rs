//! Command-line front end for the federated averaging simulator.
//!
//! Four subcommands: `run` executes one experiment and writes its metric
//! artifacts, `compare` reports baseline-versus-candidate numbers from two
//! finished runs, `sweep` re-runs a config across values of one optimizer
//! knob, and `preset` prints a bundled configuration.
//!
//! Exit codes: 0 on success, 2 when a config or input fails validation,
//! 1 for everything else (I/O, malformed artifacts).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use flsim_core::config::{preset, ExperimentConfig, PRESET_NAMES};
use flsim_core::metrics::{self, MetricsLog};
use flsim_core::sim;

#[derive(Parser)]
#[command(name = "flsim", version, about = "Virtual-time federated averaging simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a config file or `preset:<name>`.
    Run {
        /// Path to a JSON config, or `preset:light`, `preset:heavy`,
        /// `preset:light-fedavg`, `preset:heavy-fedavg`.
        config: String,
        /// Output directory; defaults to `$FLSIM_OUT/<strategy>-<hash>`
        /// (or `runs/...` when FLSIM_OUT is unset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two finished runs: candidate versus baseline.
    Compare {
        /// Baseline run directory (or its run.json).
        baseline: PathBuf,
        /// Candidate run directory (or its run.json).
        candidate: PathBuf,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run one config across several values of an optimizer knob.
    Sweep {
        /// Path to a JSON config, or `preset:<name>`.
        config: String,
        /// Which knob to sweep.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values, e.g. `--values 0,0.1,0.2`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Output directory; defaults under the same root as `run`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a bundled preset config as JSON.
    Preset {
        /// One of: light, heavy, light-fedavg, heavy-fedavg.
        name: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepParam {
    Lambda,
    Beta,
}

impl SweepParam {
    fn name(&self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Beta => "beta",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Lambda => cfg.optimizer.lambda = value,
            SweepParam::Beta => cfg.optimizer.beta = value,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .any(|e| e.downcast_ref::<flsim_core::Error>().is_some_and(|c| c.is_validation()));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, out } => cmd_run(&config, out),
        Cmd::Compare { baseline, candidate, out } => cmd_compare(&baseline, &candidate, out),
        Cmd::Sweep { config, param, values, out } => cmd_sweep(&config, param, &values, out),
        Cmd::Preset { name } => {
            println!("{}", preset(&name)?.to_json_pretty());
            Ok(())
        }
    }
}

/// Loads a config argument: either `preset:<name>` or a JSON file path.
fn load_config(arg: &str) -> Result<ExperimentConfig> {
    if let Some(name) = arg.strip_prefix("preset:") {
        return Ok(preset(name)?);
    }
    let path = Path::new(arg);
    if !path.exists() && PRESET_NAMES.contains(&arg) {
        return Err(flsim_core::Error::Config(format!(
            "no file named {arg:?}; did you mean `preset:{arg}`?"
        ))
        .into());
    }
    let cfg = ExperimentConfig::from_path(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    Ok(cfg)
}

fn out_root() -> PathBuf {
    std::env::var_os("FLSIM_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    out_root().join(format!("{}-{}", cfg.strategy.name(), &cfg.fingerprint()[..8]))
}

/// Runs one experiment and writes metrics.csv, summary.json, and run.json
/// into the output directory.
fn write_run(cfg: &ExperimentConfig, dir: &Path) -> Result<MetricsLog> {
    let log = sim::run(cfg)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    log.write_csv(&dir.join("metrics.csv"))?;
    log.write_summary(&dir.join("summary.json"))?;
    let full = serde_json::to_string_pretty(&log)?;
    std::fs::write(dir.join("run.json"), full + "\n")
        .with_context(|| format!("writing {}", dir.join("run.json").display()))?;
    Ok(log)
}

fn cmd_run(config_arg: &str, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config_arg)?;
    let dir = out.unwrap_or_else(|| default_out_dir(&cfg));
    let log = write_run(&cfg, &dir)?;
    let summary = log.summary()?;
    println!("wrote {}", dir.join("metrics.csv").display());
    println!("wrote {}", dir.join("summary.json").display());
    println!("wrote {}", dir.join("run.json").display());
    println!(
        "{}: {} rounds in {:.3} virtual s; final train loss {:.6}, eval {:.4}, mean E {:.2}, mean utilization {:.3}",
        summary.strategy,
        summary.rounds,
        summary.total_virtual_time,
        summary.final_train_loss,
        summary.final_eval_metric,
        summary.mean_e,
        summary.mean_utilization,
    );
    Ok(())
}

/// Accepts a run directory or a direct path to its run.json.
fn read_log(path: &Path) -> Result<MetricsLog> {
    let file = if path.is_dir() { path.join("run.json") } else { path.to_path_buf() };
    let text =
        std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let log: MetricsLog =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
    Ok(log)
}

fn cmd_compare(baseline: &Path, candidate: &Path, out: Option<PathBuf>) -> Result<()> {
    let base = read_log(baseline)?;
    let cand = read_log(candidate)?;
    let report = metrics::compare(&base, &cand)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_sweep(
    config_arg: &str,
    param: SweepParam,
    values: &[f64],
    out: Option<PathBuf>,
) -> Result<()> {
    let base = load_config(config_arg)?;
    let dir = out.unwrap_or_else(|| {
        out_root().join(format!(
            "sweep-{}-{}-{}",
            param.name(),
            base.strategy.name(),
            &base.fingerprint()[..8]
        ))
    });
    let mut entries = Vec::new();
    for &value in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg, value);
        cfg.validate()?;
        let sub = dir.join(format!("{}={value}", param.name()));
        let log = write_run(&cfg, &sub)?;
        let summary = log.summary()?;
        println!(
            "{} = {value}: final train loss {:.6}, eval {:.4}, {:.3} virtual s",
            param.name(),
            summary.final_train_loss,
            summary.final_eval_metric,
            summary.total_virtual_time,
        );
        entries.push(serde_json::json!({ "value": value, "summary": summary }));
    }
    let sweep = serde_json::json!({
        "schema": 1,
        "param": param.name(),
        "entries": entries,
    });
    let path = dir.join("sweep.json");
    std::fs::write(&path, serde_json::to_string_pretty(&sweep)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}
