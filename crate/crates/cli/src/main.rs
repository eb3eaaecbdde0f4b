//! `phi4`: experiment runner for the lattice Φ⁴₃ laboratory.
//!
//! Exit codes: 0 success, 1 a statistical check failed, 2 configuration,
//! checkpoint or I/O error.

mod artifacts;
mod checkpoint;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use artifacts::OutputDir;
use commands::{RunControl, Status};
use config::{load_config, ExperimentConfig, Subcommand};

/// Environment variable holding the worker thread budget.
const THREADS_ENV: &str = "PHI4_THREADS";

#[derive(Parser, Debug)]
#[command(name = "phi4", version, about = "Numerical experiments for the renormalised lattice Φ⁴₃ equation")]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// JSON configuration file; omitted blocks take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue a simulation from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop a simulation after this many steps, leaving a checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
}

fn thread_budget(cfg: &ExperimentConfig) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
            anyhow::ensure!(n > 0, "{THREADS_ENV} must be positive");
            Ok(n)
        }
        Err(_) => match cfg.threads {
            Some(0) => anyhow::bail!("invalid config at `threads`: must be positive"),
            Some(n) => Ok(n),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        },
    }
}

fn execute(cli: Cli) -> Result<Status> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let (seed, seed_source) = match (cli.seed, cfg.seed) {
        (Some(s), _) => (s, "command-line"),
        (None, Some(s)) => (s, "config"),
        (None, None) => (0, "default"),
    };
    let threads = thread_budget(&cfg)?;
    let output = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("phi4-out").join(cli.command.name()));
    let resolved = cfg.resolve(cli.command, seed, threads, output.clone())?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    let mut out = OutputDir::create(&output)?;
    let control = RunControl { resume: cli.resume, stop_after: cli.stop_after };
    let status = commands::run(&resolved, &mut out, control)?;
    if status != Status::AlreadyComplete {
        out.write_manifest(&resolved, seed_source, status.label())?;
    }
    eprintln!("{}: {} ({})", cli.command.name(), status.label(), out.root().display());
    Ok(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Status::Failed) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
