//! `opdyn` — run opinion-dynamics experiments from a config file.
//!
//! Exit codes: 0 all assertions pass, 1 an assertion failed (report still
//! written), 2 usage/config error.

mod config;
mod report;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "opdyn",
    about = "Opinion dynamics on trust networks: deterministic averaging, \
             random-actions herding, and convergence diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the network and config without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute the configured model run and diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for replica execution (never affects results).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump per-replica traces (ra) or opinion columns (degroot).
        #[arg(long)]
        trace: bool,
        /// Tail-statistic threshold override.
        #[arg(long)]
        eps: Option<f64>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a summary.json as a human-readable table.
    Report { summary: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match runner::cmd_validate(&config) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                println!("{}", serde_json::json!({ "errors": [e.to_string()] }));
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            jobs,
            out,
            trace,
            eps,
            seed,
        } => {
            let opts = runner::RunOptions {
                jobs,
                out,
                trace,
                eps,
                seed,
            };
            match runner::cmd_run(&config, &opts) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => {
                    eprintln!("assertion failure: see summary.json");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("config error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Report { summary } => match report::cmd_report(&summary) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
        },
    }
}
