//! Command-line driver: one subcommand per pipeline stage.
//!
//! Every command reads an experiment file (`--config`), writes its CSV
//! artifacts into an output directory together with `manifest.json`, and is
//! fully determined by the configuration and seed.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use manifest::Manifest;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "KELLY_LAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "kelly-lab", version, about = "Kelly-optimal portfolio laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides `run.seed` and `run.seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to `<root>/<command>`, where the root is
    /// `$KELLY_LAB_OUT`, else `run.output_dir`, else `runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one price path.
    Simulate(Common),
    /// Analytic Kelly optimum per regime and the switching growth rate.
    Solve(Common),
    /// Train an agent, then evaluate it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Sweep file: repeat the run for each value of one parameter.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation episodes; overrides `run.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate the analytic baseline policy configured in `[baseline]`.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Expected growth over a grid of two stock weights.
    Qsurface(Common),
    /// Fit the regime HMM on simulated episodes and score it on fresh ones.
    HmmFit {
        #[command(flatten)]
        common: Common,
        /// Fresh episodes to score on; defaults to the fitting count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Grid search of the fractional regime-switching baseline.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        /// Episodes per grid cell; overrides `baseline.grid_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
}

/// Runs the parsed command line, returning the process exit code.
pub fn run(cli: Cli) -> ExitCode {
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

pub fn main() -> ExitCode {
    run(Cli::parse())
}
