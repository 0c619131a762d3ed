//! `smml`: solve for SMML estimators, run the lattice oracle, check
//! optimality conditions and export results.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 non-convergence
//! or a failed check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Outcome};
use config::Format;

#[derive(Debug, Parser)]
#[command(name = "smml", version, about = "SMML estimators for exponential families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the stationarity equations; writes result.json, geometry.json, cells.svg and cells.csv.
    Solve { config: PathBuf },
    /// Greedy descent over lattice colourings; writes oracle.json, points.csv and overlay.svg.
    Oracle { config: PathBuf },
    /// Verify the optimality conditions at a stored estimator.
    Check { config: PathBuf, result: PathBuf },
    /// Re-emit a stored estimator as JSON, a cell picture (d = 2) or a cell table.
    Export {
        result: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Write here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Solve { config } => commands::solve(config),
        Command::Oracle { config } => commands::oracle(config),
        Command::Check { config, result } => commands::check(config, result),
        Command::Export { result, format, output } => commands::export(result, *format, output.as_deref()),
    };
    match outcome {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
