use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Solve, replay and certify multiplexed control problems.
#[derive(Debug, Parser)]
#[command(name = "lieplex", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a scenario and write the trajectory, controls and a summary.
    Solve {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the maximum principle along a trajectory file.
    Verify {
        scenario: PathBuf,
        trajectory: PathBuf,
        /// Multiplies every verifier tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Where to write the report; standard output if omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Roll a controls file forward and write the trajectory.
    Simulate {
        scenario: PathBuf,
        controls: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve { scenario, out, seed } => commands::solve(&scenario, &out, seed),
        Command::Verify {
            scenario,
            trajectory,
            tol_scale,
            report,
        } => commands::verify(&scenario, &trajectory, tol_scale, report.as_deref()),
        Command::Simulate { scenario, controls, out } => commands::simulate(&scenario, &controls, &out),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err) as u8)
        }
    }
}
