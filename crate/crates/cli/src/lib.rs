//! `rsd`: command-line front end of the toolkit.
//!
//! Every subcommand reads a JSON config, writes a JSON report to `--out`
//! (or stdout) and a short human-readable summary to stderr. Exit codes:
//! 0 success, 1 config error, 2 validation failure, 3 solver failure,
//! 4 design infeasibility.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use commands::Method;
use error::{CliError, ExitKind};
use report::{Report, Timing, VERSION};

#[derive(Debug, Parser)]
#[command(name = "rsd", version, about = "Steady-state Kalman accuracy analysis and redundant sensor design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(short = 'c', long = "config", value_name = "PATH")]
    pub config: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check invertibility of A, controllability and collective observability.
    Validate(Common),
    /// Solve the steady-state Riccati equation for the base (and augmented) network.
    Dare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fixed")]
        method: Method,
    },
    /// Compare base and augmented covariances.
    Analyze(Common),
    /// Design redundant sensor output matrices.
    Design {
        #[command(flatten)]
        common: Common,
        /// Directory for `gamma_trajectory.csv`.
        #[arg(long, value_name = "DIR")]
        csv_dir: Option<PathBuf>,
    },
    /// Monte-Carlo Kalman filtering of the configured networks.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Directory for per-network trajectory and histogram CSVs.
        #[arg(long, value_name = "DIR")]
        csv_dir: Option<PathBuf>,
        /// Time steps per trial; overrides the config.
        #[arg(long)]
        steps: Option<usize>,
        /// Independent trials; overrides the config.
        #[arg(long)]
        trials: Option<usize>,
        /// Base RNG seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Dare { .. } => "dare",
            Command::Analyze(_) => "analyze",
            Command::Design { .. } => "design",
            Command::Simulate { .. } => "simulate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Analyze(c) => c,
            Command::Dare { common, .. } | Command::Design { common, .. } | Command::Simulate { common, .. } => {
                common
            }
        }
    }
}

/// Outcome of one invocation. `report` is absent when the command failed
/// before producing results.
pub struct Execution {
    pub kind: ExitKind,
    pub report: Option<Report>,
    pub summary: Vec<String>,
    pub error: Option<String>,
}

/// Runs a parsed command line. `arguments` is echoed into the report.
pub fn execute(cli: &Cli, arguments: Vec<String>) -> Execution {
    let start = Instant::now();
    let common = cli.command.common();
    let outcome = config::load(&common.config).and_then(|cfg| match &cli.command {
        Command::Validate(_) => commands::validate(&cfg),
        Command::Dare { method, .. } => commands::dare(&cfg, *method),
        Command::Analyze(_) => commands::analyze(&cfg),
        Command::Design { csv_dir, .. } => commands::design(&cfg, csv_dir.as_deref()),
        Command::Simulate { csv_dir, steps, trials, seed, .. } => {
            commands::simulate(&cfg, csv_dir.as_deref(), *steps, *trials, *seed)
        }
    });
    let out = match outcome {
        Ok(o) => o,
        Err(e) => return Execution { kind: e.kind, report: None, summary: Vec::new(), error: Some(e.message) },
    };
    let report = Report {
        command: cli.command.name().into(),
        arguments,
        version: VERSION.into(),
        config: common.config.display().to_string(),
        status: out.status,
        exit_code: out.kind.code(),
        timing: Timing { wall_clock_seconds: start.elapsed().as_secs_f64() },
        warnings: out.warnings,
        result: out.result,
    };
    if let Some(path) = &common.out {
        if let Err(e) = std::fs::write(path, report.to_json()) {
            let err = CliError::io(path, e);
            return Execution { kind: err.kind, report: Some(report), summary: out.summary, error: Some(err.message) };
        }
    }
    Execution { kind: out.kind, report: Some(report), summary: out.summary, error: out.failure }
}
