use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod ingest;
mod serve;
mod simulate;
mod trace_cmd;

/// Cellular-geolocation contact tracing toolkit.
#[derive(Debug, Parser)]
#[command(name = "celltrace", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the smartphone-only vs any-phone point-process experiment.
    Simulate(simulate::SimulateArgs),
    /// Trace the positives of an operator fixture through the operator network.
    Trace(trace_cmd::TraceArgs),
    /// Start the registry HTTP service.
    Serve(serve::ServeArgs),
    /// Validate location samples and add them to an operator store.
    Ingest(ingest::IngestArgs),
}

/// Shared `--data-dir` flag.
#[derive(Debug, Clone, Args)]
pub struct DataDir {
    /// Service data directory.
    #[arg(long, env = "CELLTRACE_DATA_DIR", default_value = "celltrace-data")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag combinations that clap cannot express; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] celltrace_core::ppp::SimError),
    #[error(transparent)]
    Net(#[from] celltrace_core::opnet::NetError),
    #[error(transparent)]
    Registry(#[from] celltrace_registry::RegistryError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Trace(a) => trace_cmd::run(a),
        Command::Serve(a) => serve::run(a),
        Command::Ingest(a) => ingest::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// clap value parser for strictly positive finite floats.
pub fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !v.is_finite() || v <= 0.0 {
        return Err(format!("must be positive, got {s}"));
    }
    Ok(v)
}
