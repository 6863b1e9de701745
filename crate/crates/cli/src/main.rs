//! Command-line front end: rate-distortion curves, allocations, simulations,
//! finite-alphabet bound evaluation and the built-in verification suite.

mod commands;
mod config;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] causal_ceo::Error),
    #[error("{}: {source}", path.display())]
    Spec { path: PathBuf, source: causal_ceo::Error },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "causal-ceo", version, about = "Causal CEO rate-distortion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the target distortion and report every rate-distortion function.
    Curve(commands::CurveArgs),
    /// Per-observer distortion allocation at a single target.
    Allocate(commands::CurveArgs),
    /// Run the Gaussian test-channel scheme and compare with the exact decoder.
    Simulate(commands::SimulateArgs),
    /// Evaluate the finite-alphabet Berger-Tung bound for a pmf table.
    BtEval(commands::BtArgs),
    /// Run the built-in invariant suites.
    Selftest(selftest::SelftestArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Curve(a) => commands::curve(a),
        Command::Allocate(a) => commands::allocate(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::BtEval(a) => commands::bt_eval(a),
        Command::Selftest(a) => selftest::selftest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 64 } else { 1 })
        }
    }
}
