//! Simulated multi-operator tracing protocol.
//!
//! A central tracer and a set of operator nodes exchange messages over an
//! in-process bus. For a confirmed positive the tracer asks the owning
//! operator for the subscriber's mobility history, then broadcasts that
//! history (bucketed) as a zone query to every operator. Each operator
//! answers with its own subscribers seen within the contact distance in the
//! same bucket. Completed workflows feed the suspect store.
//!
//! Delivery is deterministic. One bus step visits operators in ascending id
//! order; for each it delivers the head of the tracer→operator link, then the
//! head of the operator→tracer link. Links are FIFO. Timeouts are counted in
//! steps.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{time_bucket, TimeBucket};
use crate::phone::PhoneNumber;
use crate::trace::{
    aggregate_suspects, build_spatial_index, find_contacts, group_trajectories, parse_samples, ContactEvent, CoordMode,
    EventSet, LocationSample, Position, SpatialIndex, SuspectEntry, TraceError, Trajectory, DEFAULT_CONTACT_DISTANCE_M,
    DEFAULT_LOOKBACK_SECS, DEFAULT_MULTIPLICITY_THRESHOLD,
};

pub const DEFAULT_TIMEOUT_STEPS: u64 = 1_000;
/// Trajectory file inside each operator directory.
pub const TRAJECTORY_FILE: &str = "trajectories.jsonl";
/// Optional list of confirmed positives at the top of a fixture directory.
pub const POSITIVES_FILE: &str = "positives.jsonl";

#[derive(Debug, Error)]
pub enum NetError {
    #[error("number {0} is not a subscriber of any operator")]
    UnknownSubscriber(PhoneNumber),
    #[error("a tracing workflow for {0} is already active")]
    DuplicateWorkflow(PhoneNumber),
    #[error("number {number} is claimed by operators {first} and {second}")]
    SharedSubscriber {
        number: PhoneNumber,
        first: OperatorId,
        second: OperatorId,
    },
    #[error("duplicate operator id {0}")]
    DuplicateOperator(OperatorId),
    #[error("invalid window [{start}, {end}]: must be ordered and at most {max} seconds long")]
    Window { start: i64, end: i64, max: i64 },
    #[error("zone query is empty")]
    EmptyZone,
    #[error("operators use coordinate modes {0:?} and {1:?}")]
    MixedModes(CoordMode, CoordMode),
    #[error("{path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatorId(pub String);

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for OperatorId {
    fn from(s: &str) -> Self {
        OperatorId(s.to_string())
    }
}

pub type WorkflowId = u64;

/// Closed interval of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    /// The lookback window ending at `end`.
    pub fn lookback(end: i64, length: i64) -> Self {
        Window {
            start: end - length,
            end,
        }
    }

    fn validate(&self, max: i64) -> Result<(), NetError> {
        if self.end < self.start || self.end - self.start > max {
            return Err(NetError::Window {
                start: self.start,
                end: self.end,
                max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobilityRequest {
    pub workflow: WorkflowId,
    pub infected_number: PhoneNumber,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityResult {
    Found(Trajectory),
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobilityResponse {
    pub workflow: WorkflowId,
    pub operator: OperatorId,
    pub result: MobilityResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZonePoint {
    pub bucket: TimeBucket,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneQuery {
    pub workflow: WorkflowId,
    pub infected_number: PhoneNumber,
    pub zone: Vec<ZonePoint>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneMatch {
    pub number: PhoneNumber,
    /// Only the samples that matched the zone, time-ordered.
    pub samples: Vec<LocationSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneResponse {
    pub workflow: WorkflowId,
    pub operator: OperatorId,
    pub matches: Vec<ZoneMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    MobilityRequest(MobilityRequest),
    MobilityResponse(MobilityResponse),
    ZoneQuery(ZoneQuery),
    ZoneResponse(ZoneResponse),
}

/// A mobile operator holding trajectories of its own subscribers only.
#[derive(Debug, Clone)]
pub struct OperatorNode {
    id: OperatorId,
    subscribers: BTreeMap<PhoneNumber, Trajectory>,
    max_window: i64,
    responsive: bool,
    indexes: HashMap<(u64, i64), SpatialIndex>,
}

impl OperatorNode {
    pub fn new(id: OperatorId, trajectories: impl IntoIterator<Item = Trajectory>) -> Self {
        let subscribers = trajectories.into_iter().map(|t| (t.subscriber().clone(), t)).collect();
        OperatorNode {
            id,
            subscribers,
            max_window: DEFAULT_LOOKBACK_SECS,
            responsive: true,
            indexes: HashMap::new(),
        }
    }

    /// Builds a node from raw samples, grouping them per subscriber.
    pub fn from_samples(id: OperatorId, samples: Vec<LocationSample>) -> Self {
        let (trajectories, _) = group_trajectories(samples);
        OperatorNode::new(id, trajectories.into_values())
    }

    /// Registers a subscriber that has no location history yet.
    pub fn add_subscriber(&mut self, number: PhoneNumber) {
        self.subscribers
            .entry(number.clone())
            .or_insert_with(|| Trajectory::empty(number));
        self.indexes.clear();
    }

    pub fn id(&self) -> &OperatorId {
        &self.id
    }

    pub fn subscribers(&self) -> impl Iterator<Item = &PhoneNumber> {
        self.subscribers.keys()
    }

    pub fn trajectory(&self, number: &PhoneNumber) -> Option<&Trajectory> {
        self.subscribers.get(number)
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &LocationSample> {
        self.subscribers.values().flat_map(|t| t.samples())
    }

    pub fn mode(&self) -> Option<CoordMode> {
        self.subscribers.values().find_map(Trajectory::mode)
    }

    /// An unresponsive node silently drops everything it receives.
    pub fn set_responsive(&mut self, responsive: bool) {
        self.responsive = responsive;
    }

    pub fn is_responsive(&self) -> bool {
        self.responsive
    }

    pub fn handle_mobility_request(&self, request: &MobilityRequest) -> Result<MobilityResponse, NetError> {
        request.window.validate(self.max_window)?;
        let result = match self.subscribers.get(&request.infected_number) {
            Some(t) => MobilityResult::Found(t.clip(request.window.start, request.window.end).0),
            None => MobilityResult::NotFound,
        };
        Ok(MobilityResponse {
            workflow: request.workflow,
            operator: self.id.clone(),
            result,
        })
    }

    fn index_for(&mut self, distance: f64, bucket_width: i64) -> Result<&SpatialIndex, NetError> {
        let key = (distance.to_bits(), bucket_width);
        if !self.indexes.contains_key(&key) {
            let samples = self.all_samples().cloned().collect();
            let index = build_spatial_index(samples, distance, bucket_width, distance)?;
            self.indexes.insert(key, index);
        }
        Ok(&self.indexes[&key])
    }

    pub fn handle_zone_query(&mut self, query: &ZoneQuery) -> Result<ZoneResponse, NetError> {
        let Some(first) = query.zone.first() else {
            return Err(NetError::EmptyZone);
        };
        let width = first.bucket.width;
        let infected = query.infected_number.clone();
        let index = self.index_for(query.distance, width)?;
        let mut matched: BTreeMap<PhoneNumber, BTreeSet<usize>> = BTreeMap::new();
        for point in &query.zone {
            if point.bucket.width != width {
                return Err(TraceError::BucketMismatch {
                    index: width,
                    query: point.bucket.width,
                }
                .into());
            }
            for (i, _) in index.query_radius(&point.position, point.bucket.index, query.distance)? {
                let sample = &index.samples()[i];
                if sample.subscriber != infected {
                    matched.entry(sample.subscriber.clone()).or_default().insert(i);
                }
            }
        }
        let matches = matched
            .into_iter()
            .map(|(number, idx)| {
                let mut samples: Vec<LocationSample> = idx.into_iter().map(|i| index.samples()[i].clone()).collect();
                samples.sort_by_key(|s| s.timestamp);
                ZoneMatch { number, samples }
            })
            .collect();
        Ok(ZoneResponse {
            workflow: query.workflow,
            operator: self.id.clone(),
            matches,
        })
    }

    fn receive(&mut self, message: &Message) -> Option<Message> {
        if !self.responsive {
            return None;
        }
        match message {
            Message::MobilityRequest(r) => self.handle_mobility_request(r).ok().map(Message::MobilityResponse),
            Message::ZoneQuery(q) => self.handle_zone_query(q).ok().map(Message::ZoneResponse),
            _ => None,
        }
    }
}

/// Workflow phases in the order they are entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Requested,
    MobilityReceived,
    ZonesBroadcast,
    ResponsesCollected,
    SuspectsStored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Pending,
    Responded,
    TimedOut,
    /// The zone was empty, so the operator was not queried.
    NotQueried,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceWorkflowState {
    pub id: WorkflowId,
    pub infected_number: PhoneNumber,
    pub owner: OperatorId,
    pub window: Window,
    pub phase: Phase,
    /// Per-operator zone-query outcome.
    pub coverage: BTreeMap<OperatorId, Coverage>,
    /// The owning operator did not answer the mobility request in time.
    pub mobility_timed_out: bool,
    pub partial_coverage: bool,
    #[serde(skip)]
    zone: Option<Trajectory>,
    #[serde(skip)]
    phase_entered: u64,
    #[serde(skip)]
    events: EventSet,
}

impl TraceWorkflowState {
    fn advance(&mut self, to: Phase, step: u64) {
        assert!(
            to > self.phase,
            "workflow {} cannot move from {:?} to {:?}",
            self.id,
            self.phase,
            to
        );
        self.phase = to;
        self.phase_entered = step;
    }

    pub fn is_complete(&self) -> bool {
        self.phase == Phase::SuspectsStored
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    /// Meters in geographic mode, scaled units in planar mode.
    pub distance: f64,
    pub bucket_width: i64,
    pub lookback_secs: i64,
    pub threshold: usize,
    pub timeout_steps: u64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            distance: DEFAULT_CONTACT_DISTANCE_M,
            bucket_width: crate::geo::DEFAULT_BUCKET_WIDTH,
            lookback_secs: DEFAULT_LOOKBACK_SECS,
            threshold: DEFAULT_MULTIPLICITY_THRESHOLD,
            timeout_steps: DEFAULT_TIMEOUT_STEPS,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<(), NetError> {
        if !self.distance.is_finite() || self.distance <= 0.0 {
            return Err(TraceError::Distance(self.distance).into());
        }
        time_bucket(0, self.bucket_width).map_err(TraceError::from)?;
        if self.threshold < 1 {
            return Err(TraceError::Threshold.into());
        }
        if self.lookback_secs < 0 {
            return Err(NetError::Window {
                start: -self.lookback_secs,
                end: 0,
                max: DEFAULT_LOOKBACK_SECS,
            });
        }
        Ok(())
    }
}

/// The central "possible infected numbers" store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuspectStore {
    pub entries: BTreeMap<PhoneNumber, SuspectEntry>,
    pub flagged: BTreeSet<PhoneNumber>,
}

impl SuspectStore {
    fn from_events(events: &[ContactEvent], threshold: usize) -> Result<Self, TraceError> {
        let report = aggregate_suspects(events, threshold)?;
        Ok(SuspectStore {
            entries: report
                .entries
                .into_iter()
                .map(|e| (e.contact_number.clone(), e))
                .collect(),
            flagged: report.flagged.into_iter().collect(),
        })
    }

    pub fn get(&self, number: &PhoneNumber) -> Option<&SuspectEntry> {
        self.entries.get(number)
    }

    pub fn is_flagged(&self, number: &PhoneNumber) -> bool {
        self.flagged.contains(number)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `number,event_count,distinct_infected,first_seen,last_seen,flagged`,
    /// one row per entry in number order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("number,event_count,distinct_infected,first_seen,last_seen,flagged\n");
        for e in self.entries.values() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.contact_number,
                e.event_count,
                e.distinct_infected,
                e.first_seen,
                e.last_seen,
                self.flagged.contains(&e.contact_number)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case", tag = "node", content = "id")]
pub enum Endpoint {
    Central,
    Operator(usize),
}

#[derive(Debug, Clone, Serialize)]
struct LogRecord<'a> {
    step: u64,
    from: &'a str,
    to: &'a str,
    dropped: bool,
    message: &'a Message,
}

/// A tracer plus its operators, wired through the simulated bus.
#[derive(Debug)]
pub struct TraceNetwork {
    params: TraceParams,
    operators: Vec<OperatorNode>,
    directory: BTreeMap<PhoneNumber, usize>,
    // (from, to) -> FIFO
    links: BTreeMap<(Endpoint, Endpoint), VecDeque<Message>>,
    workflows: BTreeMap<WorkflowId, TraceWorkflowState>,
    active: BTreeMap<PhoneNumber, WorkflowId>,
    positives: BTreeSet<PhoneNumber>,
    events: EventSet,
    store: SuspectStore,
    next_workflow: WorkflowId,
    step: u64,
    log: Vec<String>,
}

impl TraceNetwork {
    /// Operators are ordered by id; each number must belong to exactly one.
    pub fn new(params: TraceParams, mut operators: Vec<OperatorNode>) -> Result<Self, NetError> {
        params.validate()?;
        operators.sort_by(|a, b| a.id.cmp(&b.id));
        for w in operators.windows(2) {
            if w[0].id == w[1].id {
                return Err(NetError::DuplicateOperator(w[0].id.clone()));
            }
        }
        let ids: Vec<OperatorId> = operators.iter().map(|o| o.id.clone()).collect();
        let mut mode: Option<CoordMode> = None;
        let mut directory: BTreeMap<PhoneNumber, usize> = BTreeMap::new();
        for (i, op) in operators.iter_mut().enumerate() {
            op.max_window = params.lookback_secs;
            match (mode, op.mode()) {
                (Some(a), Some(b)) if a != b => return Err(NetError::MixedModes(a, b)),
                (None, m) => mode = m,
                _ => {}
            }
            for number in op.subscribers.keys() {
                if let Some(&prev) = directory.get(number) {
                    return Err(NetError::SharedSubscriber {
                        number: number.clone(),
                        first: ids[prev].clone(),
                        second: op.id.clone(),
                    });
                }
                directory.insert(number.clone(), i);
            }
        }
        Ok(TraceNetwork {
            params,
            operators,
            directory,
            links: BTreeMap::new(),
            workflows: BTreeMap::new(),
            active: BTreeMap::new(),
            positives: BTreeSet::new(),
            events: EventSet::default(),
            store: SuspectStore::default(),
            next_workflow: 1,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn params(&self) -> &TraceParams {
        &self.params
    }

    pub fn operators(&self) -> &[OperatorNode] {
        &self.operators
    }

    pub fn operator_mut(&mut self, id: &OperatorId) -> Option<&mut OperatorNode> {
        self.operators.iter_mut().find(|o| &o.id == id)
    }

    pub fn owner_of(&self, number: &PhoneNumber) -> Option<&OperatorId> {
        self.directory.get(number).map(|&i| &self.operators[i].id)
    }

    pub fn workflows(&self) -> impl Iterator<Item = &TraceWorkflowState> {
        self.workflows.values()
    }

    pub fn workflow(&self, id: WorkflowId) -> Option<&TraceWorkflowState> {
        self.workflows.get(&id)
    }

    pub fn suspects(&self) -> &SuspectStore {
        &self.store
    }

    pub fn positives(&self) -> &BTreeSet<PhoneNumber> {
        &self.positives
    }

    /// Every delivered message as one JSON line.
    pub fn trace_log(&self) -> &[String] {
        &self.log
    }

    pub fn pending_messages(&self) -> usize {
        self.links.values().map(VecDeque::len).sum()
    }

    fn endpoint_name(&self, e: Endpoint) -> String {
        match e {
            Endpoint::Central => "central".to_string(),
            Endpoint::Operator(i) => self.operators[i].id.0.clone(),
        }
    }

    fn send(&mut self, from: Endpoint, to: Endpoint, message: Message) {
        self.links.entry((from, to)).or_default().push_back(message);
    }

    fn record(&mut self, from: Endpoint, to: Endpoint, dropped: bool, message: &Message) {
        let (from, to) = (self.endpoint_name(from), self.endpoint_name(to));
        let rec = LogRecord {
            step: self.step,
            from: &from,
            to: &to,
            dropped,
            message,
        };
        self.log
            .push(serde_json::to_string(&rec).expect("trace records serialize"));
    }

    /// Starts a workflow for a confirmed positive reported at `reported_at`.
    pub fn submit_positive(&mut self, number: &PhoneNumber, reported_at: i64) -> Result<WorkflowId, NetError> {
        let Some(&owner) = self.directory.get(number) else {
            return Err(NetError::UnknownSubscriber(number.clone()));
        };
        if self.active.contains_key(number) {
            return Err(NetError::DuplicateWorkflow(number.clone()));
        }
        let id = self.next_workflow;
        self.next_workflow += 1;
        let window = Window::lookback(reported_at, self.params.lookback_secs);
        let coverage = self
            .operators
            .iter()
            .map(|o| (o.id.clone(), Coverage::Pending))
            .collect();
        self.workflows.insert(
            id,
            TraceWorkflowState {
                id,
                infected_number: number.clone(),
                owner: self.operators[owner].id.clone(),
                window,
                phase: Phase::Requested,
                coverage,
                mobility_timed_out: false,
                partial_coverage: false,
                zone: None,
                phase_entered: self.step,
                events: EventSet::default(),
            },
        );
        self.active.insert(number.clone(), id);
        self.positives.insert(number.clone());
        let request = MobilityRequest {
            workflow: id,
            infected_number: number.clone(),
            window,
        };
        self.send(
            Endpoint::Central,
            Endpoint::Operator(owner),
            Message::MobilityRequest(request),
        );
        Ok(id)
    }

    pub fn has_active_workflows(&self) -> bool {
        !self.active.is_empty()
    }

    /// Runs the bus until every workflow has stored its suspects, then
    /// returns the updated store. Without active workflows nothing changes.
    pub fn run_trace_round(&mut self) -> Result<&SuspectStore, NetError> {
        while self.has_active_workflows() {
            self.step()?;
        }
        Ok(&self.store)
    }

    /// One bus step followed by timeout checks.
    pub fn step(&mut self) -> Result<(), NetError> {
        self.step += 1;
        for i in 0..self.operators.len() {
            let op = Endpoint::Operator(i);
            if let Some(msg) = self
                .links
                .get_mut(&(Endpoint::Central, op))
                .and_then(VecDeque::pop_front)
            {
                let reply = self.operators[i].receive(&msg);
                self.record(Endpoint::Central, op, reply.is_none(), &msg);
                if let Some(reply) = reply {
                    self.send(op, Endpoint::Central, reply);
                }
            }
            if let Some(msg) = self
                .links
                .get_mut(&(op, Endpoint::Central))
                .and_then(VecDeque::pop_front)
            {
                self.record(op, Endpoint::Central, false, &msg);
                self.central_receive(i, msg)?;
            }
        }
        self.check_timeouts()
    }

    fn central_receive(&mut self, from: usize, message: Message) -> Result<(), NetError> {
        match message {
            Message::MobilityResponse(resp) => {
                let Some(wf) = self.workflows.get(&resp.workflow) else {
                    return Ok(());
                };
                if wf.phase != Phase::Requested || self.operators[from].id != wf.owner {
                    return Ok(());
                }
                let zone = match resp.result {
                    MobilityResult::Found(t) if t.subscriber() == &wf.infected_number => t,
                    _ => Trajectory::empty(wf.infected_number.clone()),
                };
                self.on_mobility(resp.workflow, zone)
            }
            Message::ZoneResponse(resp) => {
                let params = self.params;
                let op_id = self.operators[from].id.clone();
                let Some(wf) = self.workflows.get_mut(&resp.workflow) else {
                    return Ok(());
                };
                if wf.phase != Phase::ZonesBroadcast || wf.coverage.get(&op_id) != Some(&Coverage::Pending) {
                    return Ok(());
                }
                let zone = wf.zone.as_ref().expect("zone stored before broadcast");
                let mut zone_by_bucket: BTreeMap<i64, Vec<&Position>> = BTreeMap::new();
                for s in zone.samples() {
                    zone_by_bucket
                        .entry(s.timestamp.div_euclid(params.bucket_width))
                        .or_default()
                        .push(&s.position);
                }
                for m in &resp.matches {
                    // only numbers this operator owns are accepted
                    if self.directory.get(&m.number) != Some(&from) {
                        continue;
                    }
                    for s in &m.samples {
                        let bucket = time_bucket(s.timestamp, params.bucket_width).map_err(TraceError::from)?;
                        for z in zone_by_bucket.get(&bucket.index).into_iter().flatten() {
                            let d = z.distance(&s.position)?;
                            if d <= params.distance {
                                wf.events.insert(&wf.infected_number, &m.number, bucket, d);
                            }
                        }
                    }
                }
                wf.coverage.insert(op_id, Coverage::Responded);
                self.maybe_finish(resp.workflow)
            }
            _ => Ok(()),
        }
    }

    fn on_mobility(&mut self, id: WorkflowId, zone: Trajectory) -> Result<(), NetError> {
        let step = self.step;
        let params = self.params;
        let wf = self.workflows.get_mut(&id).expect("workflow exists");
        wf.advance(Phase::MobilityReceived, step);
        let points: Vec<ZonePoint> = zone
            .samples()
            .iter()
            .map(|s| ZonePoint {
                bucket: TimeBucket {
                    index: s.timestamp.div_euclid(params.bucket_width),
                    width: params.bucket_width,
                },
                position: s.position,
            })
            .collect();
        let infected = wf.infected_number.clone();
        wf.zone = Some(zone);
        wf.advance(Phase::ZonesBroadcast, step);
        if points.is_empty() {
            for c in wf.coverage.values_mut() {
                *c = Coverage::NotQueried;
            }
            return self.maybe_finish(id);
        }
        for i in 0..self.operators.len() {
            let query = ZoneQuery {
                workflow: id,
                infected_number: infected.clone(),
                zone: points.clone(),
                distance: params.distance,
            };
            self.send(Endpoint::Central, Endpoint::Operator(i), Message::ZoneQuery(query));
        }
        Ok(())
    }

    fn maybe_finish(&mut self, id: WorkflowId) -> Result<(), NetError> {
        let step = self.step;
        let wf = self.workflows.get_mut(&id).expect("workflow exists");
        if wf.coverage.values().any(|c| *c == Coverage::Pending) {
            return Ok(());
        }
        wf.partial_coverage = wf.mobility_timed_out || wf.coverage.values().any(|c| *c == Coverage::TimedOut);
        wf.advance(Phase::ResponsesCollected, step);
        let events = std::mem::take(&mut wf.events);
        wf.advance(Phase::SuspectsStored, step);
        let number = wf.infected_number.clone();
        self.active.remove(&number);
        self.events = std::mem::take(&mut self.events).merge(events);
        self.rebuild_store()
    }

    fn rebuild_store(&mut self) -> Result<(), NetError> {
        let events: Vec<ContactEvent> = std::mem::take(&mut self.events).into_events();
        let visible: Vec<ContactEvent> = events
            .iter()
            .filter(|e| !self.positives.contains(&e.contact_number))
            .cloned()
            .collect();
        self.store = SuspectStore::from_events(&visible, self.params.threshold)?;
        for e in events {
            self.events
                .insert(&e.infected_number, &e.contact_number, e.bucket, e.distance);
        }
        Ok(())
    }

    fn check_timeouts(&mut self) -> Result<(), NetError> {
        let (step, limit) = (self.step, self.params.timeout_steps);
        let expired: Vec<WorkflowId> = self
            .active
            .values()
            .copied()
            .filter(|id| step - self.workflows[id].phase_entered >= limit)
            .collect();
        for id in expired {
            let wf = self.workflows.get_mut(&id).expect("workflow exists");
            match wf.phase {
                Phase::Requested => {
                    wf.mobility_timed_out = true;
                    let empty = Trajectory::empty(wf.infected_number.clone());
                    self.on_mobility(id, empty)?;
                }
                Phase::ZonesBroadcast => {
                    for c in wf.coverage.values_mut() {
                        if *c == Coverage::Pending {
                            *c = Coverage::TimedOut;
                        }
                    }
                    self.maybe_finish(id)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Contact tracing over the union of all operator data in one place, using
/// the trace engine directly. Reference result for the distributed protocol.
pub fn trace_centrally(
    operators: &[OperatorNode],
    positives: &[(PhoneNumber, i64)],
    params: &TraceParams,
) -> Result<SuspectStore, NetError> {
    params.validate()?;
    let owned: BTreeMap<&PhoneNumber, &OperatorNode> = operators
        .iter()
        .flat_map(|o| o.subscribers().map(move |n| (n, o)))
        .collect();
    let mut infected: BTreeMap<PhoneNumber, Trajectory> = BTreeMap::new();
    for (number, reported_at) in positives {
        let Some(op) = owned.get(number) else { continue };
        let window = Window::lookback(*reported_at, params.lookback_secs);
        let clipped = op
            .trajectory(number)
            .map(|t| t.clip(window.start, window.end).0)
            .unwrap_or_else(|| Trajectory::empty(number.clone()));
        infected
            .entry(number.clone())
            .and_modify(|t| *t = t.union(&clipped))
            .or_insert(clipped);
    }
    let samples: Vec<LocationSample> = operators.iter().flat_map(|o| o.all_samples().cloned()).collect();
    let index = build_spatial_index(samples, params.distance, params.bucket_width, params.distance)?;
    let infected: Vec<Trajectory> = infected.into_values().collect();
    let events = find_contacts(&infected, &index, params.distance, params.bucket_width)?;
    Ok(SuspectStore::from_events(&events, params.threshold)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveReport {
    pub number: PhoneNumber,
    pub reported_at: i64,
}

/// Operator directories plus the positives list found in a fixture directory.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub operators: Vec<OperatorNode>,
    pub positives: Vec<PositiveReport>,
}

fn fixture_err(path: &Path, message: impl fmt::Display) -> NetError {
    NetError::Fixture {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Loads every `<dir>/<operator>/trajectories.jsonl`. Malformed lines are
/// errors naming the file and line.
pub fn load_operators(dir: &Path) -> Result<Vec<OperatorNode>, NetError> {
    let entries = fs::read_dir(dir).map_err(|e| fixture_err(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut operators = Vec::new();
    for d in dirs {
        let id = OperatorId(d.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let path = d.join(TRAJECTORY_FILE);
        let samples = if path.exists() {
            let file = fs::File::open(&path).map_err(|e| fixture_err(&path, e))?;
            let report = parse_samples(BufReader::new(file)).map_err(|e| fixture_err(&path, e))?;
            if let Some(bad) = report.rejected.first() {
                return Err(fixture_err(&path, format!("line {}: {}", bad.line, bad.reason)));
            }
            report.samples
        } else {
            Vec::new()
        };
        let (trajectories, duplicates) = group_trajectories(samples);
        if let Some(dup) = duplicates.first() {
            return Err(fixture_err(
                &path,
                format!("duplicate sample for {} at {}", dup.subscriber, dup.timestamp),
            ));
        }
        operators.push(OperatorNode::new(id, trajectories.into_values()));
    }
    Ok(operators)
}

pub fn load_fixture(dir: &Path) -> Result<Fixture, NetError> {
    if !dir.is_dir() {
        return Err(fixture_err(dir, "fixture directory not found"));
    }
    let operators = load_operators(dir)?;
    let path = dir.join(POSITIVES_FILE);
    let mut positives = Vec::new();
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| fixture_err(&path, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let p: PositiveReport =
                serde_json::from_str(line).map_err(|e| fixture_err(&path, format!("line {}: {e}", i + 1)))?;
            positives.push(p);
        }
    }
    Ok(Fixture { operators, positives })
}

/// Outcome of tracing a whole fixture through the network.
#[derive(Debug)]
pub struct FixtureRun {
    pub network: TraceNetwork,
    /// Positives that no operator knows.
    pub unknown: Vec<PhoneNumber>,
}

/// Submits the positives in order, running a trace round after each so a
/// repeated number opens a fresh workflow.
pub fn run_fixture(fixture: Fixture, params: TraceParams) -> Result<FixtureRun, NetError> {
    let mut network = TraceNetwork::new(params, fixture.operators)?;
    let mut unknown = Vec::new();
    for p in &fixture.positives {
        match network.submit_positive(&p.number, p.reported_at) {
            Ok(_) => {}
            Err(NetError::UnknownSubscriber(n)) => unknown.push(n),
            Err(NetError::DuplicateWorkflow(_)) => {
                network.run_trace_round()?;
                network.submit_positive(&p.number, p.reported_at)?;
            }
            Err(e) => return Err(e),
        }
    }
    network.run_trace_round()?;
    Ok(FixtureRun { network, unknown })
}
