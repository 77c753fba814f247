//! Command-line entry point: simulate, train, enhance, eval and bench
//! workflows over the core library, with structured configs, JSON Lines
//! logging and reproducible seeds.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use logging::Logger;

/// Usage/config errors exit 2, runtime failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl From<picknet_core::Error> for CliError {
    fn from(e: picknet_core::Error) -> Self {
        use picknet_core::Error::*;
        match e {
            InvalidConfig(_) | InvalidInput(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "picknet", version, about = "Real-time channel selection for ad hoc microphone arrays")]
struct Cli {
    /// Write JSON Lines log events to this path.
    #[arg(long, global = true)]
    log: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate multi-microphone training samples from clean speech WAVs.
    Simulate(commands::simulate::SimulateArgs),
    /// Train the channel-selection model on a simulated dataset.
    Train(commands::train::TrainArgs),
    /// Enhance a multi-device recording (one WAV per device).
    Enhance(commands::enhance::EnhanceArgs),
    /// Closest-microphone accuracy against simulated ground truth.
    Eval(commands::eval::EvalArgs),
    /// Model-evaluation timing and MAC counts per channel count.
    Bench(commands::bench::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = match Logger::create(cli.log.as_deref()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot open log file: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate::run(args, &mut logger),
        Command::Train(args) => commands::train::run(args, &mut logger),
        Command::Enhance(args) => commands::enhance::run(args, &mut logger),
        Command::Eval(args) => commands::eval::run(args, &mut logger),
        Command::Bench(args) => commands::bench::run(args, &mut logger),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
