//! Command-line shell: scenario files in, CSV/JSON reports out.
//!
//! Exit codes: 0 success, 1 invariant or convergence failure,
//! 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use bdsvie_cli::commands::{self, Flags, Outcome};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdsvie", about = "Exact discrete solver for doubly stochastic Volterra systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the scenario seed for randomized suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Omit wall-clock timings so reports are byte-reproducible.
    #[arg(long, global = true)]
    stable_output: bool,
    /// Allow tree sizes above the built-in step guard.
    #[arg(long, global = true)]
    guard_override: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write solution.csv plus report.json.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the scenario's named invariant suites (or a single one).
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        suite: Option<String>,
    },
    /// Re-solve over a sequence of grid sizes and report error ratios.
    Convergence {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
    },
    /// Write the closed-form representation demonstrations as CSV.
    Repdemo {
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long = "N")]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Flags {
        seed: cli.seed,
        stable_output: cli.stable_output,
        guard_override: cli.guard_override,
    };
    let result = match &cli.command {
        Command::Solve { scenario, out } => commands::solve(scenario, out, &flags),
        Command::Check { scenario, suite } => commands::check(scenario, suite.as_deref(), &flags),
        Command::Convergence { scenario, steps } => commands::convergence(scenario, steps, &flags),
        Command::Repdemo { horizon, steps, out } => commands::repdemo(*horizon, *steps, out, &flags),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failure(msg)) => {
            eprintln!("failure: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
