use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufReader, Write};
use std::path::PathBuf;

use celltrace_core::opnet::{load_operators, OperatorId, TRAJECTORY_FILE};
use celltrace_core::trace::{parse_samples, CoordMode, RejectedLine};
use celltrace_core::PhoneNumber;
use celltrace_registry::registry::OPERATORS_DIR;
use clap::Args;

use crate::{CliError, DataDir};

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Operator that owns the samples.
    #[arg(long)]
    operator: String,
    /// Line-delimited JSON samples.
    #[arg(long)]
    file: PathBuf,
    #[command(flatten)]
    data: DataDir,
}

fn valid_operator_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

pub fn run(a: IngestArgs) -> Result<(), CliError> {
    if !valid_operator_id(&a.operator) {
        return Err(CliError::Usage(format!(
            "invalid operator id {:?}: use letters, digits, '-', '_' or '.'",
            a.operator
        )));
    }
    let root = a.data.data_dir.join(OPERATORS_DIR);
    let existing = if root.is_dir() {
        load_operators(&root)?
    } else {
        Vec::new()
    };

    let me = OperatorId(a.operator.clone());
    let mut owner: BTreeMap<PhoneNumber, OperatorId> = BTreeMap::new();
    let mut seen: BTreeSet<(PhoneNumber, i64)> = BTreeSet::new();
    let mut mode: Option<CoordMode> = None;
    for op in &existing {
        for n in op.subscribers() {
            owner.insert(n.clone(), op.id().clone());
        }
        if op.id() == &me {
            mode = op.mode();
            seen.extend(op.all_samples().map(|s| (s.subscriber.clone(), s.timestamp)));
        }
    }

    let file = fs::File::open(&a.file).map_err(CliError::io(&a.file))?;
    let report = parse_samples(BufReader::new(file)).map_err(CliError::io(&a.file))?;
    let mut rejected = report.rejected;
    let mut accepted = Vec::new();
    for (sample, line) in report.samples.into_iter().zip(report.sample_lines) {
        let reject = |reason: String| RejectedLine { line, reason };
        if let Some(o) = owner.get(&sample.subscriber).filter(|o| **o != me) {
            rejected.push(reject(format!("{} is a subscriber of operator {o}", sample.subscriber)));
            continue;
        }
        let m = sample.position.mode();
        if mode.is_some_and(|expected| expected != m) {
            rejected.push(reject(format!(
                "coordinate mode differs from the operator store ({m:?})"
            )));
            continue;
        }
        if !seen.insert((sample.subscriber.clone(), sample.timestamp)) {
            rejected.push(reject(format!(
                "duplicate sample for {} at {}",
                sample.subscriber, sample.timestamp
            )));
            continue;
        }
        mode = Some(m);
        accepted.push(sample);
    }
    rejected.sort_by_key(|r| r.line);

    for r in &rejected {
        eprintln!("{}:{}: {}", a.file.display(), r.line, r.reason);
    }
    println!("{} accepted, {} rejected", accepted.len(), rejected.len());
    if accepted.is_empty() {
        return Err(CliError::Failed(format!("no valid samples in {}", a.file.display())));
    }

    let dir = root.join(&a.operator);
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let path = dir.join(TRAJECTORY_FILE);
    let mut text = String::new();
    for s in &accepted {
        text.push_str(&serde_json::to_string(s).expect("sample serializes"));
        text.push('\n');
    }
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(CliError::io(&path))?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.sync_data())
        .map_err(CliError::io(&path))?;
    Ok(())
}
