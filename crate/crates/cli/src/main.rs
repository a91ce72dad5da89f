#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use crate::config::ControllerKind;

/// Soft-arm simulation, identification and tracking experiments.
#[derive(Debug, Parser)]
#[command(name = "softarm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured controller and write the trajectory log.
    Simulate(RunArgs),
    /// Estimate unknown coefficients from a trajectory log.
    Identify(IdentifyArgs),
    /// Closed-loop tracking run with metrics.
    Track(RunArgs),
    /// Adaptive versus inverse dynamics over a payload sweep.
    Compare(RunArgs),
    /// Latency of dynamic-term and regressor evaluation.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub controller: Option<ControllerKind>,
    /// True tip payload (kg).
    #[arg(long)]
    pub payload: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trajectory log CSV.
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Segment counts to benchmark, overriding `bench.segments`.
    #[arg(long, value_delimiter = ',')]
    pub segments: Option<Vec<usize>>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Runtime,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: ErrorKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl CliError {
    pub fn config(message: impl Into<String>, path: Option<String>) -> Self {
        Self {
            error: ErrorKind::Config,
            message: message.into(),
            path,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            error: ErrorKind::Runtime,
            message: message.into(),
            path: None,
        }
    }

    fn exit_code(&self) -> u8 {
        match self.error {
            ErrorKind::Config => 2,
            ErrorKind::Runtime => 3,
        }
    }
}

impl From<softarm::Error> for CliError {
    fn from(e: softarm::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("SOFTARM_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Identify(a) => commands::identify(&a),
        Command::Track(a) => commands::track(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Bench(a) => bench::run(&a),
    };
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}
