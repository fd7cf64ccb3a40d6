//! `gossiplab` command-line driver.
//!
//! Subcommands: `run`, `stability`, `sweep`, `bounds`, `validate`.
//! Exit codes: 0 success, 1 runtime failure (or failed validation),
//! 2 configuration / input parse error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "gossiplab", version, about = "Decentralized SGD with multiple gossip steps: runs, stability experiments, sweeps, and bound tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration file (flat key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out` key).
    #[arg(long)]
    out: Option<String>,
    /// Seed list `a,b,c` (overrides the config's `seeds` key).
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads for independent grid points / seeds.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Execute decentralized SGD runs, one trajectory CSV per seed.
    Run(ExperimentArgs),
    /// Coupled perturbed-dataset runs with weight-distance tracking.
    Stability(ExperimentArgs),
    /// Grid sweep over (topology, Q, c, m, b) with a centralized baseline.
    Sweep(ExperimentArgs),
    /// Evaluate every closed-form bound from a key=value inputs file.
    Bounds {
        /// Bound-inputs file (flat key=value lines).
        #[arg(long)]
        config: PathBuf,
        /// Also write `bounds.csv` into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the gossip-matrix invariants of a matrix CSV.
    Validate {
        /// Matrix CSV (one row per line, comma-separated decimals).
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_experiment(args: &ExperimentArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seeds) = &args.seeds {
        cfg.override_seeds(seeds);
    }
    if let Some(out) = &args.out {
        cfg.override_out(out);
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_experiment(&args)?;
            commands::cmd_run(&cfg, args.jobs)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Stability(args) => {
            let cfg = load_experiment(&args)?;
            commands::cmd_stability(&cfg, args.jobs)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(args) => {
            let cfg = load_experiment(&args)?;
            commands::cmd_sweep(&cfg, args.jobs)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { config, out } => {
            let table = commands::cmd_bounds(&config, out.as_deref())?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let (report, all_pass) = commands::cmd_validate(&config)?;
            print!("{report}");
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
