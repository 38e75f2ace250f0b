//! `graphstab` experiment runner.
//!
//! ```text
//! graphstab run <config>          run one experiment, write CSV/JSON + manifest
//! graphstab plots <dir> <kind>    reshape results into plot series
//! graphstab bounds <params>       print a bound report as JSON
//! ```
//!
//! Exit codes: 0 success, 1 user error, 2 internal error. Failures print a
//! JSON object `{"error": ..., "message": ...}` on stderr. The worker count
//! comes from `GRAPHSTAB_WORKERS`.

mod config;
mod output;
mod plots;
mod run;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] graphstab::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(graphstab::Error::Capacity(_)) => "capacity",
            CliError::Core(graphstab::Error::Condition(_)) => "condition",
            CliError::Core(_) => "experiment",
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(graphstab::Error::NonFinite(_) | graphstab::Error::NonDeterministic(_))
            | CliError::Io(_)
            | CliError::Csv(_)
            | CliError::Json(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "graphstab", version, about = "Stability experiments on graph-structured samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Write plot series (scaling, envelope, tail, discrepancy) from a result directory.
    Plots { dir: PathBuf, kind: String },
    /// Evaluate the stability bounds for a params file and print JSON.
    Bounds { params: PathBuf },
}

fn init_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GRAPHSTAB_WORKERS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("GRAPHSTAB_WORKERS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_workers()?;
    match cli.command {
        Command::Run { config } => run::run(&config),
        Command::Plots { dir, kind } => plots::emit(&dir, &kind),
        Command::Bounds { params } => {
            let report = run::bounds_from_params(&params)?;
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
