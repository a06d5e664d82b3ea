//! `qreg`: disk sweeps, linear-FA analysis, Four Rooms runs and the
//! verification suites.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod cmd;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Failure;

#[derive(Parser)]
#[command(name = "qreg", version, about = "Target networks vs functional regularization experiments")]
struct Cli {
    /// Worker threads for grid sweeps (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral radius maps of the two-state MDP over the disk.
    Disk(cmd::disk::DiskArgs),
    /// Spectral reports for one linear function approximation problem.
    Analyze(cmd::analyze::AnalyzeArgs),
    /// Q-learning on the Four Rooms gridworld over a grid of settings.
    Fourrooms(cmd::fourrooms::FourRoomsArgs),
    /// Run the oracle and property suites.
    Verify(cmd::verify::VerifyArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Disk(a) => cmd::disk::run(a),
        Command::Analyze(a) => cmd::analyze::run(a),
        Command::Fourrooms(a) => cmd::fourrooms::run(a),
        Command::Verify(a) => cmd::verify::run(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
