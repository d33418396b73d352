//! Registry operations over the durable log and the embedded tracer.
//!
//! All writes go through one lock: check the entry against the current
//! state, append and sync it, then apply it. Reads share the lock.
//!
//! The suspect store is not persisted. It is rebuilt at startup by
//! submitting the logged positives to the operator network in log order,
//! with the timestamps they were reported at, which gives the same store the
//! live service had.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use celltrace_core::opnet::{load_operators, NetError, TraceNetwork, TraceParams};
use celltrace_core::triage::{questionnaire_schema, Question, Questionnaire, RuleSet, TriageError, TriageResult};
use celltrace_core::{PhoneNumber, PhoneNumberError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::area::{AreaCell, AreaError, BoundingBox, CELL_DEGREES};
use crate::geocode::{FixtureGeocoder, Geocoder};
use crate::store::{
    AppendLog, LogEntry, QuestionnaireRecord, RegistryState, StateError, StoreError, TestRecord, TestResult,
};

pub const LOG_FILE: &str = "registry.log";
pub const OPERATORS_DIR: &str = "operators";
pub const GEOCODER_FILE: &str = "geocoder.json";

pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64)
    })
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    InvalidNumber(#[from] PhoneNumberError),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("missing or unknown token")]
    Unauthorized,
    #[error("startup failed: {0}")]
    Startup(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Network(#[from] NetError),
}

impl RegistryError {
    /// Stable machine-readable code for the error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::InvalidNumber(_) => "invalid_number",
            RegistryError::Validation(_) => "validation_error",
            RegistryError::NotFound(_) => "not_found",
            RegistryError::Conflict(_) => "conflict",
            RegistryError::Unauthorized => "unauthorized",
            RegistryError::Startup(_) | RegistryError::Store(_) | RegistryError::Network(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            RegistryError::InvalidNumber(_) | RegistryError::Validation(_) => 400,
            RegistryError::Unauthorized => 401,
            RegistryError::NotFound(_) => 404,
            RegistryError::Conflict(_) => 409,
            _ => 500,
        }
    }
}

impl From<AreaError> for RegistryError {
    fn from(e: AreaError) -> Self {
        RegistryError::Validation(e.to_string())
    }
}

impl From<TriageError> for RegistryError {
    fn from(e: TriageError) -> Self {
        RegistryError::Validation(e.to_string())
    }
}

pub struct RegistryConfig {
    pub data_dir: PathBuf,
    pub rules: RuleSet,
    pub trace: TraceParams,
    pub clock: Clock,
    /// Defaults to a [`FixtureGeocoder`] read from `data_dir/geocoder.json`
    /// when that file exists.
    pub geocoder: Option<Box<dyn Geocoder>>,
}

impl RegistryConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        RegistryConfig {
            data_dir: data_dir.into(),
            rules: RuleSet::default(),
            trace: TraceParams::default(),
            clock: system_clock(),
            geocoder: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct NewTest {
    /// Client-supplied idempotency key.
    #[serde(default)]
    pub request_id: Option<String>,
    pub address: String,
    pub numbers: Vec<String>,
    #[serde(default)]
    pub recorded_at: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RecordAck {
    pub record_id: u64,
    /// False when the request id had been seen before.
    pub created: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResultAck {
    pub record_id: u64,
    pub result: TestResult,
    pub workflows_started: usize,
}

/// A test record without numbers or address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordSummary {
    pub record_id: u64,
    pub result: TestResult,
    pub area_cell: Option<String>,
    pub number_count: usize,
    pub recorded_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaCount {
    pub area_cell: String,
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
    pub positive_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StatusReport {
    NotListed,
    Listed { event_count: usize, flagged: bool },
}

struct Inner {
    log: AppendLog,
    state: RegistryState,
    network: TraceNetwork,
}

pub struct Registry {
    inner: RwLock<Inner>,
    rules: RuleSet,
    geocoder: Box<dyn Geocoder>,
    clock: Clock,
    data_dir: PathBuf,
}

fn parse_numbers(raw: &[String]) -> Result<Vec<PhoneNumber>, RegistryError> {
    if raw.is_empty() {
        return Err(RegistryError::Validation("numbers must not be empty".into()));
    }
    let mut out: Vec<PhoneNumber> = Vec::with_capacity(raw.len());
    for r in raw {
        let n = PhoneNumber::parse(r)?;
        if !out.contains(&n) {
            out.push(n);
        }
    }
    Ok(out)
}

fn new_token() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

/// Submits one positive record's numbers and runs the round to completion.
fn trace_positive(network: &mut TraceNetwork, record: &TestRecord, at: i64) -> Result<usize, NetError> {
    let mut started = 0;
    for n in &record.numbers {
        match network.submit_positive(n, at) {
            Ok(_) => started += 1,
            // numbers no operator knows have nothing to trace
            Err(NetError::UnknownSubscriber(_)) => {}
            Err(e) => return Err(e),
        }
    }
    network.run_trace_round()?;
    Ok(started)
}

impl Registry {
    pub fn open(config: RegistryConfig) -> Result<Self, RegistryError> {
        let dir = &config.data_dir;
        fs::create_dir_all(dir).map_err(|e| RegistryError::Startup(format!("{}: {e}", dir.display())))?;
        let geocoder = match config.geocoder {
            Some(g) => g,
            None => {
                let path = dir.join(GEOCODER_FILE);
                if path.exists() {
                    Box::new(FixtureGeocoder::from_file(&path).map_err(RegistryError::Startup)?)
                } else {
                    Box::new(FixtureGeocoder::default())
                }
            }
        };
        let ops_dir = dir.join(OPERATORS_DIR);
        let operators = if ops_dir.is_dir() {
            load_operators(&ops_dir)?
        } else {
            Vec::new()
        };
        let mut network = TraceNetwork::new(config.trace, operators)?;
        let (log, state, _) = AppendLog::open(&dir.join(LOG_FILE))?;
        for &(id, at) in &state.positives {
            trace_positive(&mut network, &state.records[&id], at)?;
        }
        Ok(Registry {
            inner: RwLock::new(Inner { log, state, network }),
            rules: config.rules,
            geocoder,
            clock: config.clock,
            data_dir: config.data_dir,
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn read(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    /// A copy of the folded state, for audits and tests.
    pub fn state(&self) -> RegistryState {
        self.read().state.clone()
    }

    /// Suspect store as CSV, for audits and tests.
    pub fn suspects_csv(&self) -> String {
        self.read().network.suspects().to_csv()
    }

    fn commit(inner: &mut Inner, entry: LogEntry) -> Result<(), RegistryError> {
        inner.state.check(&entry).map_err(|e| match e {
            StateError::UnknownRecord(_) => RegistryError::NotFound(e.to_string()),
            StateError::Unregistered => RegistryError::Unauthorized,
            _ => RegistryError::Conflict(e.to_string()),
        })?;
        inner.log.append(&entry)?;
        inner.state.apply(&entry).expect("entry was checked");
        Ok(())
    }

    pub fn record_test(&self, req: NewTest) -> Result<RecordAck, RegistryError> {
        let numbers = parse_numbers(&req.numbers)?;
        let area_cell = self.geocoder.geocode(&req.address).map(AreaCell::of);
        let recorded_at = req.recorded_at.unwrap_or_else(|| (self.clock)());
        let mut inner = self.write();
        if let Some(&record_id) = req.request_id.as_ref().and_then(|r| inner.state.request_ids.get(r)) {
            return Ok(RecordAck {
                record_id,
                created: false,
            });
        }
        let record_id = inner.state.next_record_id();
        let record = TestRecord {
            record_id,
            address: req.address,
            area_cell,
            numbers,
            result: TestResult::Pending,
            recorded_at,
        };
        let request_id = req.request_id;
        Self::commit(&mut inner, LogEntry::TestRecorded { record, request_id })?;
        Ok(RecordAck {
            record_id,
            created: true,
        })
    }

    pub fn record(&self, record_id: u64) -> Option<RecordSummary> {
        self.read().state.records.get(&record_id).map(|r| RecordSummary {
            record_id: r.record_id,
            result: r.result,
            area_cell: r.area_cell.map(|c| c.to_string()),
            number_count: r.numbers.len(),
            recorded_at: r.recorded_at,
        })
    }

    /// Sets a pending record's result. A positive result updates the area
    /// count and traces each of the record's numbers.
    pub fn report_result(&self, record_id: u64, result: TestResult) -> Result<ResultAck, RegistryError> {
        if result == TestResult::Pending {
            return Err(RegistryError::Validation("result must be positive or negative".into()));
        }
        let at = (self.clock)();
        let mut inner = self.write();
        Self::commit(&mut inner, LogEntry::ResultSet { record_id, result, at })?;
        let mut workflows_started = 0;
        if result == TestResult::Positive {
            let inner = &mut *inner;
            let record = &inner.state.records[&record_id];
            workflows_started = trace_positive(&mut inner.network, record, at)?;
        }
        Ok(ResultAck {
            record_id,
            result,
            workflows_started,
        })
    }

    pub fn area_counts(&self, bbox: &BoundingBox) -> Vec<AreaCount> {
        self.read()
            .state
            .area_counts
            .iter()
            .filter(|(cell, &n)| n > 0 && bbox.intersects(cell))
            .map(|(cell, &positive_count)| {
                let (south, west) = cell.south_west();
                AreaCount {
                    area_cell: cell.to_string(),
                    south,
                    west,
                    north: south + CELL_DEGREES,
                    east: west + CELL_DEGREES,
                    positive_count,
                }
            })
            .collect()
    }

    /// Issues a fresh token; any earlier token for the number stops working.
    pub fn register_user(&self, number: &str) -> Result<String, RegistryError> {
        let number = PhoneNumber::parse(number)?;
        let at = (self.clock)();
        let mut inner = self.write();
        let mut token = new_token();
        while inner.state.tokens.contains_key(&token) {
            token = new_token();
        }
        Self::commit(
            &mut inner,
            LogEntry::UserRegistered {
                number,
                token: token.clone(),
                at,
            },
        )?;
        Ok(token)
    }

    fn number_for(inner: &Inner, token: &str) -> Result<PhoneNumber, RegistryError> {
        inner
            .state
            .tokens
            .get(token)
            .cloned()
            .ok_or(RegistryError::Unauthorized)
    }

    pub fn status(&self, token: &str) -> Result<StatusReport, RegistryError> {
        let inner = self.read();
        let number = Self::number_for(&inner, token)?;
        let suspects = inner.network.suspects();
        Ok(match suspects.get(&number) {
            None => StatusReport::NotListed,
            Some(e) => StatusReport::Listed {
                event_count: e.event_count,
                flagged: suspects.is_flagged(&number),
            },
        })
    }

    pub fn questionnaire_schema(&self) -> &'static [Question] {
        questionnaire_schema()
    }

    pub fn submit_questionnaire(
        &self,
        token: &str,
        answers: &BTreeMap<String, bool>,
    ) -> Result<TriageResult, RegistryError> {
        let at = (self.clock)();
        let mut inner = self.write();
        let number = Self::number_for(&inner, token)?;
        let q = Questionnaire::from_map(answers)?;
        let result = self.rules.score(&q);
        let record = QuestionnaireRecord {
            number,
            answers: q.answers().to_vec(),
            result: result.clone(),
            at,
        };
        Self::commit(&mut inner, LogEntry::QuestionnaireSubmitted(record))?;
        Ok(result)
    }
}
