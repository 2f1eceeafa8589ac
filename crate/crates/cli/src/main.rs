//! Experiment driver: load a config, run the oracle / learning / simulation
//! pipelines, write CSV traces and flat key-value reports.

mod commands;
mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dosreg_core::Error;

use commands::{cmd_bound, cmd_learn, cmd_oracle, cmd_simulate, cmd_sweep, GainSource};
use config::ExperimentConfig;
use pipeline::Workbench;

#[derive(Parser)]
#[command(
    name = "dosreg",
    about = "Data-driven optimal output regulation under denial-of-service attacks",
    long_about = "Learns an optimal output-regulation controller for a discrete-time linear \
                  system from input/state data collected under DoS attacks, computes the \
                  closed-form resilience bound on the attack duration, and simulates the \
                  closed loop. All runs are deterministic in their config and seeds."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the model-based problem: optimal gain, value matrix, resilience bound.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Parent directory for the run folder (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override dos_seed (exploration_seed becomes seed+1).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn the gain from data collected under attack; writes the iteration history.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate the closed loop under the configured schedule and write the trace CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Gain source: `oracle`, `learned`, or a path to a gain file.
        #[arg(long, default_value = "oracle")]
        gain: String,
    },
    /// Report only the resilience bound for the configured attack budget.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn + simulate across a list of seeds, one worker thread each.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list, e.g. `--seeds 1,2,3`.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Dimension(_) | Error::Validation(_) | Error::Config(_) | Error::Argument(_) => 2,
        Error::NotSchur { .. }
        | Error::Convergence { .. }
        | Error::Divergence { .. }
        | Error::Numerical(_) => 3,
        Error::RankDeficient { .. } | Error::Excitation(_) => 4,
    }
}

fn load(config_path: &Path, seed: Option<u64>) -> dosreg_core::Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config = commands::override_seed(&config, seed);
    }
    let dir = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, dir))
}

fn run() -> dosreg_core::Result<()> {
    match Cli::parse().command {
        Command::Oracle { config, out, seed } => {
            let (config, dir) = load(&config, seed)?;
            let bench = Workbench::build(config, &dir)?;
            cmd_oracle(&bench, out.as_deref())?;
        }
        Command::Learn { config, out, seed } => {
            let (config, dir) = load(&config, seed)?;
            let bench = Workbench::build(config, &dir)?;
            cmd_learn(&bench, out.as_deref())?;
        }
        Command::Simulate {
            config,
            out,
            seed,
            gain,
        } => {
            let (config, dir) = load(&config, seed)?;
            let bench = Workbench::build(config, &dir)?;
            cmd_simulate(&bench, &GainSource::parse(&gain), out.as_deref())?;
        }
        Command::Bound { config, out, seed } => {
            let (config, dir) = load(&config, seed)?;
            let bench = Workbench::build(config, &dir)?;
            cmd_bound(&bench, out.as_deref())?;
        }
        Command::Sweep { config, out, seeds } => {
            let (config, dir) = load(&config, None)?;
            cmd_sweep(&config, &dir, &seeds, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
