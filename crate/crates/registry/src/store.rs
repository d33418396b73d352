//! Append-only record log and the registry state folded from it.
//!
//! Each entry is one JSON line. An entry is acknowledged only after the line
//! is written and the file is synced. On open, a final line without its
//! newline is a write that never completed; it is cut off before new
//! entries are appended. Any other unreadable line is corruption.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use celltrace_core::triage::TriageResult;
use celltrace_core::PhoneNumber;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::area::AreaCell;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line} is not a valid log entry: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line} cannot be applied: {source}")]
    Replay {
        path: PathBuf,
        line: usize,
        #[source]
        source: StateError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("record {0} already exists")]
    DuplicateRecord(u64),
    #[error("record {0} not found")]
    UnknownRecord(u64),
    #[error("record {0} already has a result")]
    AlreadyResolved(u64),
    #[error("a result cannot be set back to pending")]
    PendingResult,
    #[error("number is not registered")]
    Unregistered,
    #[error("token already issued")]
    DuplicateToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestResult {
    Pending,
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub record_id: u64,
    pub address: String,
    /// `None` when the address could not be geocoded.
    pub area_cell: Option<AreaCell>,
    pub numbers: Vec<PhoneNumber>,
    pub result: TestResult,
    pub recorded_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireRecord {
    pub number: PhoneNumber,
    pub answers: Vec<bool>,
    pub result: TriageResult,
    pub at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEntry {
    TestRecorded {
        record: TestRecord,
        request_id: Option<String>,
    },
    ResultSet {
        record_id: u64,
        result: TestResult,
        at: i64,
    },
    UserRegistered {
        number: PhoneNumber,
        token: String,
        at: i64,
    },
    QuestionnaireSubmitted(QuestionnaireRecord),
}

/// Everything the registry knows, as a pure fold over the log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegistryState {
    pub records: BTreeMap<u64, TestRecord>,
    pub request_ids: BTreeMap<String, u64>,
    pub area_counts: BTreeMap<AreaCell, u64>,
    /// Current token per registered number.
    pub users: BTreeMap<PhoneNumber, String>,
    pub tokens: BTreeMap<String, PhoneNumber>,
    pub questionnaires: Vec<QuestionnaireRecord>,
    /// Positive results in the order they were set.
    pub positives: Vec<(u64, i64)>,
}

impl RegistryState {
    pub fn next_record_id(&self) -> u64 {
        self.records.keys().next_back().map_or(1, |k| k + 1)
    }

    /// Checks an entry against the current state without applying it.
    pub fn check(&self, entry: &LogEntry) -> Result<(), StateError> {
        match entry {
            LogEntry::TestRecorded { record, .. } => {
                if self.records.contains_key(&record.record_id) {
                    return Err(StateError::DuplicateRecord(record.record_id));
                }
            }
            LogEntry::ResultSet { record_id, result, .. } => {
                let rec = self
                    .records
                    .get(record_id)
                    .ok_or(StateError::UnknownRecord(*record_id))?;
                if rec.result != TestResult::Pending {
                    return Err(StateError::AlreadyResolved(*record_id));
                }
                if *result == TestResult::Pending {
                    return Err(StateError::PendingResult);
                }
            }
            LogEntry::UserRegistered { token, .. } => {
                if self.tokens.contains_key(token) {
                    return Err(StateError::DuplicateToken);
                }
            }
            LogEntry::QuestionnaireSubmitted(q) => {
                if !self.users.contains_key(&q.number) {
                    return Err(StateError::Unregistered);
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), StateError> {
        self.check(entry)?;
        match entry {
            LogEntry::TestRecorded { record, request_id } => {
                if let Some(id) = request_id {
                    self.request_ids.insert(id.clone(), record.record_id);
                }
                self.records.insert(record.record_id, record.clone());
            }
            LogEntry::ResultSet { record_id, result, at } => {
                let rec = self.records.get_mut(record_id).expect("checked above");
                rec.result = *result;
                if *result == TestResult::Positive {
                    if let Some(cell) = rec.area_cell {
                        *self.area_counts.entry(cell).or_default() += 1;
                    }
                    self.positives.push((*record_id, *at));
                }
            }
            LogEntry::UserRegistered { number, token, .. } => {
                if let Some(old) = self.users.insert(number.clone(), token.clone()) {
                    self.tokens.remove(&old);
                }
                self.tokens.insert(token.clone(), number.clone());
            }
            LogEntry::QuestionnaireSubmitted(q) => self.questionnaires.push(q.clone()),
        }
        Ok(())
    }

    /// Area counts recomputed from the records alone.
    pub fn recount_areas(&self) -> BTreeMap<AreaCell, u64> {
        let mut out = BTreeMap::new();
        for r in self.records.values().filter(|r| r.result == TestResult::Positive) {
            if let Some(cell) = r.area_cell {
                *out.entry(cell).or_default() += 1;
            }
        }
        out
    }
}

/// Entries read from a log file.
#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub entries: Vec<LogEntry>,
    /// Byte length of the complete lines.
    pub valid_len: u64,
    /// A trailing incomplete line was found.
    pub torn_tail: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a log without modifying it. A missing file is an empty log.
pub fn read_log(path: &Path) -> Result<LogContents, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut entries = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let entry = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(LogContents {
        entries,
        valid_len: complete as u64,
        torn_tail: complete < bytes.len(),
    })
}

/// Folds a log file into registry state.
pub fn replay(path: &Path) -> Result<RegistryState, StoreError> {
    fold(path, &read_log(path)?.entries)
}

fn fold(path: &Path, entries: &[LogEntry]) -> Result<RegistryState, StoreError> {
    let mut state = RegistryState::default();
    for (i, e) in entries.iter().enumerate() {
        state.apply(e).map_err(|source| StoreError::Replay {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
    }
    Ok(state)
}

/// The single writer of a log file.
#[derive(Debug)]
pub struct AppendLog {
    path: PathBuf,
    file: File,
}

impl AppendLog {
    /// Opens (creating if needed) and replays the log, cutting off a torn
    /// final line.
    pub fn open(path: &Path) -> Result<(AppendLog, RegistryState, Vec<LogEntry>), StoreError> {
        let contents = read_log(path)?;
        let state = fold(path, &contents.entries)?;
        let created = !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if contents.torn_tail {
            tracing::warn!(path = %path.display(), "discarding incomplete final log line");
            file.set_len(contents.valid_len).map_err(io_err(path))?;
            file.sync_all().map_err(io_err(path))?;
        }
        if created {
            // make the new directory entry itself durable
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(dir))?;
            }
        }
        let log = AppendLog {
            path: path.to_path_buf(),
            file,
        };
        Ok((log, state, contents.entries))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry and syncs it to disk before returning.
    pub fn append(&mut self, entry: &LogEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry).expect("log entries serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}
