use std::fs;
use std::path::PathBuf;

use celltrace_core::opnet::{load_fixture, run_fixture, TraceParams, DEFAULT_TIMEOUT_STEPS};
use celltrace_core::trace::DEFAULT_LOOKBACK_SECS;
use clap::Args;

use crate::{positive_f64, CliError};

pub const SUSPECTS_FILE: &str = "suspects.csv";
pub const TRACE_LOG_FILE: &str = "trace_log.jsonl";
pub const WORKFLOWS_FILE: &str = "workflows.jsonl";

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Fixture directory: one sub-directory per operator plus positives.jsonl.
    #[arg(long)]
    fixtures: PathBuf,
    /// Contact distance; meters for geographic fixtures, scaled units for planar ones.
    #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
    distance: f64,
    /// Time bucket width in seconds.
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(i64).range(1..))]
    bucket: i64,
    /// Contact events needed to flag a number.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    threshold: u64,
    /// Network steps before an unanswered query counts as timed out.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_STEPS, value_parser = clap::value_parser!(u64).range(1..))]
    timeout: u64,
    /// Lookback window in seconds before each positive report.
    #[arg(long, default_value_t = DEFAULT_LOOKBACK_SECS, value_parser = clap::value_parser!(i64).range(1..))]
    lookback: i64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(a: TraceArgs) -> Result<(), CliError> {
    let params = TraceParams {
        distance: a.distance,
        bucket_width: a.bucket,
        lookback_secs: a.lookback,
        threshold: a.threshold as usize,
        timeout_steps: a.timeout,
    };
    let fixture = load_fixture(&a.fixtures)?;
    let run = run_fixture(fixture, params)?;
    for n in &run.unknown {
        eprintln!("warning: positive {n} is not a subscriber of any operator");
    }

    fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let net = &run.network;
    let suspects = a.out.join(SUSPECTS_FILE);
    fs::write(&suspects, net.suspects().to_csv()).map_err(CliError::io(&suspects))?;

    let log = a.out.join(TRACE_LOG_FILE);
    let mut text = String::new();
    for line in net.trace_log() {
        text.push_str(line);
        text.push('\n');
    }
    fs::write(&log, text).map_err(CliError::io(&log))?;

    let wf = a.out.join(WORKFLOWS_FILE);
    let mut text = String::new();
    let mut partial = 0;
    for w in net.workflows() {
        partial += usize::from(w.partial_coverage || w.mobility_timed_out);
        text.push_str(&serde_json::to_string(w).expect("workflow serializes"));
        text.push('\n');
    }
    fs::write(&wf, text).map_err(CliError::io(&wf))?;

    let store = net.suspects();
    println!(
        "{} suspects, {} flagged, {} workflows ({} with partial coverage)",
        store.len(),
        store.flagged.len(),
        net.workflows().count(),
        partial
    );
    Ok(())
}
