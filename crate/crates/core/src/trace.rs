//! Spatiotemporal contact join.
//!
//! A contact event is a non-infected subscriber's sample lying within
//! distance `d` of an infected subscriber's sample in the same time bucket.
//! At most one event is kept per `(infected, contact, bucket)`, the one with
//! the smallest distance.
//!
//! Planar samples are indexed on a 2-D grid. Geographic samples are mapped to
//! Earth-centred Cartesian coordinates and indexed on a 3-D grid: the chord
//! between two points never exceeds their great-circle distance, so scanning
//! the neighbouring cells of size `>= d` finds every pair within `d` meters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{
    euclidean_distance, haversine_distance, time_bucket, GeoCoordinate, GeoError, PlanarPoint, TimeBucket,
};
use crate::phone::PhoneNumber;

/// Default contact distance in meters.
pub const DEFAULT_CONTACT_DISTANCE_M: f64 = 2.0;
/// Default lookback window: seven days, in seconds.
pub const DEFAULT_LOOKBACK_SECS: i64 = 7 * 24 * 3600;
pub const DEFAULT_MULTIPLICITY_THRESHOLD: usize = 2;

/// Meters per scaled planar unit.
pub const METERS_PER_PLANAR_UNIT: f64 = 100.0;

const METERS_PER_DEGREE: f64 = crate::geo::EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
const CELL_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cell size {cell_size} is smaller than contact distance {distance}")]
    CellTooSmall { cell_size: f64, distance: f64 },
    #[error("contact distance must be positive and finite, got {0}")]
    Distance(f64),
    #[error("coordinate mode mismatch: expected {expected:?}, found {found:?}")]
    ModeMismatch { expected: CoordMode, found: CoordMode },
    #[error("index was built with bucket width {index}, query uses {query}")]
    BucketMismatch { index: i64, query: i64 },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("multiplicity threshold must be at least 1")]
    Threshold,
    #[error("noise sigma must be non-negative and finite, got {0}")]
    Sigma(f64),
    #[error("trajectory for {subscriber} contains a sample of {found}")]
    ForeignSample {
        subscriber: PhoneNumber,
        found: PhoneNumber,
    },
    #[error("trajectory for {subscriber} is not strictly ordered at timestamp {timestamp}")]
    Unordered { subscriber: PhoneNumber, timestamp: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    Geo,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Position {
    Geo(GeoCoordinate),
    Planar(PlanarPoint),
}

impl Position {
    pub fn mode(&self) -> CoordMode {
        match self {
            Position::Geo(_) => CoordMode::Geo,
            Position::Planar(_) => CoordMode::Planar,
        }
    }

    /// Distance in meters for geographic positions, scaled units for planar
    /// ones. Mixed modes are rejected.
    pub fn distance(&self, other: &Position) -> Result<f64, TraceError> {
        match (self, other) {
            (Position::Geo(a), Position::Geo(b)) => Ok(haversine_distance(*a, *b)),
            (Position::Planar(a), Position::Planar(b)) => Ok(euclidean_distance(*a, *b)),
            _ => Err(TraceError::ModeMismatch {
                expected: self.mode(),
                found: other.mode(),
            }),
        }
    }

    fn cartesian(&self) -> [f64; 3] {
        match self {
            Position::Geo(g) => g.to_ecef(),
            Position::Planar(p) => [p.x, p.y, 0.0],
        }
    }
}

/// One ingestion record: `{subscriber, timestamp, lat, lon}` or
/// `{subscriber, timestamp, x, y}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRecord", into = "SampleRecord")]
pub struct LocationSample {
    pub subscriber: PhoneNumber,
    pub timestamp: i64,
    pub position: Position,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    subscriber: PhoneNumber,
    timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

impl TryFrom<SampleRecord> for LocationSample {
    type Error = String;

    fn try_from(r: SampleRecord) -> Result<Self, String> {
        let position = match (r.lat, r.lon, r.x, r.y) {
            (Some(lat), Some(lon), None, None) => {
                Position::Geo(GeoCoordinate::new(lat, lon).map_err(|e| e.to_string())?)
            }
            (None, None, Some(x), Some(y)) => Position::Planar(PlanarPoint::try_new(x, y).map_err(|e| e.to_string())?),
            _ => return Err("expected exactly one of the coordinate pairs (lat, lon) or (x, y)".into()),
        };
        Ok(LocationSample {
            subscriber: r.subscriber,
            timestamp: r.timestamp,
            position,
        })
    }
}

impl From<LocationSample> for SampleRecord {
    fn from(s: LocationSample) -> Self {
        let (lat, lon, x, y) = match s.position {
            Position::Geo(g) => (Some(g.lat()), Some(g.lon()), None, None),
            Position::Planar(p) => (None, None, Some(p.x), Some(p.y)),
        };
        SampleRecord {
            subscriber: s.subscriber,
            timestamp: s.timestamp,
            lat,
            lon,
            x,
            y,
        }
    }
}

impl LocationSample {
    pub fn new(subscriber: PhoneNumber, timestamp: i64, position: Position) -> Self {
        LocationSample {
            subscriber,
            timestamp,
            position,
        }
    }
}

/// Time-ordered samples of a single subscriber, all in one coordinate mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    subscriber: PhoneNumber,
    samples: Vec<LocationSample>,
}

impl Trajectory {
    pub fn new(subscriber: PhoneNumber, samples: Vec<LocationSample>) -> Result<Self, TraceError> {
        for s in &samples {
            if s.subscriber != subscriber {
                return Err(TraceError::ForeignSample {
                    subscriber,
                    found: s.subscriber.clone(),
                });
            }
        }
        for w in samples.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(TraceError::Unordered {
                    subscriber,
                    timestamp: w[1].timestamp,
                });
            }
            if w[1].position.mode() != w[0].position.mode() {
                return Err(TraceError::ModeMismatch {
                    expected: w[0].position.mode(),
                    found: w[1].position.mode(),
                });
            }
        }
        Ok(Trajectory { subscriber, samples })
    }

    pub fn empty(subscriber: PhoneNumber) -> Self {
        Trajectory {
            subscriber,
            samples: Vec::new(),
        }
    }

    pub fn subscriber(&self) -> &PhoneNumber {
        &self.subscriber
    }

    pub fn samples(&self) -> &[LocationSample] {
        &self.samples
    }

    pub fn mode(&self) -> Option<CoordMode> {
        self.samples.first().map(|s| s.position.mode())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `start <= timestamp <= end`, plus the number dropped.
    pub fn clip(&self, start: i64, end: i64) -> (Trajectory, usize) {
        let kept: Vec<_> = self
            .samples
            .iter()
            .filter(|s| (start..=end).contains(&s.timestamp))
            .cloned()
            .collect();
        let dropped = self.samples.len() - kept.len();
        (
            Trajectory {
                subscriber: self.subscriber.clone(),
                samples: kept,
            },
            dropped,
        )
    }

    /// Merges two trajectories of the same subscriber; duplicate timestamps
    /// keep the sample from `self`.
    pub fn union(&self, other: &Trajectory) -> Trajectory {
        let mut by_time: BTreeMap<i64, LocationSample> = BTreeMap::new();
        for s in other.samples.iter().chain(&self.samples) {
            by_time.insert(s.timestamp, s.clone());
        }
        Trajectory {
            subscriber: self.subscriber.clone(),
            samples: by_time.into_values().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub infected_number: PhoneNumber,
    pub contact_number: PhoneNumber,
    pub bucket: TimeBucket,
    /// Meters in geographic mode, scaled units in planar mode.
    pub distance: f64,
}

type EventKey = (PhoneNumber, PhoneNumber, TimeBucket);

/// Keeps the minimum-distance event per key and returns them in canonical
/// `(infected, contact, bucket)` order.
#[derive(Debug, Clone, Default)]
pub(crate) struct EventSet(BTreeMap<EventKey, f64>);

impl EventSet {
    pub(crate) fn insert(&mut self, infected: &PhoneNumber, contact: &PhoneNumber, bucket: TimeBucket, distance: f64) {
        let key = (infected.clone(), contact.clone(), bucket);
        self.0
            .entry(key)
            .and_modify(|d| *d = d.min(distance))
            .or_insert(distance);
    }

    pub(crate) fn merge(mut self, other: EventSet) -> EventSet {
        for ((i, c, b), d) in other.0 {
            self.insert(&i, &c, b, d);
        }
        self
    }

    pub(crate) fn into_events(self) -> Vec<ContactEvent> {
        self.0
            .into_iter()
            .map(|((infected_number, contact_number, bucket), distance)| ContactEvent {
                infected_number,
                contact_number,
                bucket,
                distance,
            })
            .collect()
    }
}

type CellKey = (i64, [i64; 3]);

/// Location samples keyed by `(time bucket, grid cell)`.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    mode: Option<CoordMode>,
    cell_size: f64,
    bucket_width: i64,
    samples: Vec<LocationSample>,
    cells: HashMap<CellKey, Vec<usize>>,
}

fn check_distance(d: f64) -> Result<(), TraceError> {
    if !d.is_finite() || d <= 0.0 {
        return Err(TraceError::Distance(d));
    }
    Ok(())
}

/// Builds the `(bucket, cell)` index. `cell_size` must be at least the
/// contact distance the index will be queried with.
pub fn build_spatial_index(
    samples: Vec<LocationSample>,
    cell_size: f64,
    bucket_width: i64,
    distance: f64,
) -> Result<SpatialIndex, TraceError> {
    check_distance(distance)?;
    if !cell_size.is_finite() || cell_size < distance {
        return Err(TraceError::CellTooSmall { cell_size, distance });
    }
    time_bucket(0, bucket_width)?;
    let mode = samples.first().map(|s| s.position.mode());
    let mut index = SpatialIndex {
        mode,
        cell_size,
        bucket_width,
        samples: Vec::with_capacity(samples.len()),
        cells: HashMap::new(),
    };
    for s in samples {
        if let Some(expected) = mode {
            if s.position.mode() != expected {
                return Err(TraceError::ModeMismatch {
                    expected,
                    found: s.position.mode(),
                });
            }
        }
        let key = index.key(&s.position, s.timestamp);
        index.cells.entry(key).or_default().push(index.samples.len());
        index.samples.push(s);
    }
    Ok(index)
}

impl SpatialIndex {
    fn cell_coords(&self, pos: &Position) -> [i64; 3] {
        let cell = self.cell_size * (1.0 + CELL_SLACK);
        pos.cartesian().map(|c| (c / cell).floor() as i64)
    }

    fn key(&self, pos: &Position, timestamp: i64) -> CellKey {
        (timestamp.div_euclid(self.bucket_width), self.cell_coords(pos))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mode(&self) -> Option<CoordMode> {
        self.mode
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn bucket_width(&self) -> i64 {
        self.bucket_width
    }

    pub fn samples(&self) -> &[LocationSample] {
        &self.samples
    }

    /// Sample indices stored under exactly this bucket and cell.
    pub fn cell_members(&self, position: &Position, bucket: i64) -> &[usize] {
        self.cells
            .get(&(bucket, self.cell_coords(position)))
            .map_or(&[], Vec::as_slice)
    }

    /// All samples in `bucket` within `distance` of `position`, as
    /// `(sample index, distance)` sorted by index.
    pub fn query_radius(
        &self,
        position: &Position,
        bucket: i64,
        distance: f64,
    ) -> Result<Vec<(usize, f64)>, TraceError> {
        if distance > self.cell_size {
            return Err(TraceError::CellTooSmall {
                cell_size: self.cell_size,
                distance,
            });
        }
        let Some(mode) = self.mode else {
            return Ok(Vec::new());
        };
        if position.mode() != mode {
            return Err(TraceError::ModeMismatch {
                expected: mode,
                found: position.mode(),
            });
        }
        let [cx, cy, cz] = self.cell_coords(position);
        let dz_range = if mode == CoordMode::Geo { -1..=1 } else { 0..=0 };
        let mut hits = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in dz_range.clone() {
                    let Some(members) = self.cells.get(&(bucket, [cx + dx, cy + dy, cz + dz])) else {
                        continue;
                    };
                    for &i in members {
                        let d = position.distance(&self.samples[i].position)?;
                        if d <= distance {
                            hits.push((i, d));
                        }
                    }
                }
            }
        }
        hits.sort_by_key(|&(i, _)| i);
        Ok(hits)
    }
}

fn infected_set(infected: &[Trajectory]) -> BTreeSet<&PhoneNumber> {
    infected.iter().map(|t| t.subscriber()).collect()
}

/// Contact events between the infected trajectories and the indexed
/// samples, in canonical `(infected, contact, bucket)` order.
pub fn find_contacts(
    infected: &[Trajectory],
    index: &SpatialIndex,
    distance: f64,
    bucket_width: i64,
) -> Result<Vec<ContactEvent>, TraceError> {
    check_distance(distance)?;
    if bucket_width != index.bucket_width {
        return Err(TraceError::BucketMismatch {
            index: index.bucket_width,
            query: bucket_width,
        });
    }
    let positives = infected_set(infected);
    let merged = infected
        .par_iter()
        .map(|traj| -> Result<EventSet, TraceError> {
            let mut events = EventSet::default();
            for s in traj.samples() {
                let bucket = time_bucket(s.timestamp, bucket_width)?;
                for (i, d) in index.query_radius(&s.position, bucket.index, distance)? {
                    let contact = &index.samples[i].subscriber;
                    if !positives.contains(contact) {
                        events.insert(traj.subscriber(), contact, bucket, d);
                    }
                }
            }
            Ok(events)
        })
        .try_reduce(EventSet::default, |a, b| Ok(a.merge(b)))?;
    Ok(merged.into_events())
}

/// Exhaustive all-pairs reference for [`find_contacts`].
pub fn brute_force_contacts(
    infected: &[Trajectory],
    all_samples: &[LocationSample],
    distance: f64,
    bucket_width: i64,
) -> Result<Vec<ContactEvent>, TraceError> {
    let positives = infected_set(infected);
    let mut events = EventSet::default();
    for traj in infected {
        for s in traj.samples() {
            let bucket = time_bucket(s.timestamp, bucket_width)?;
            for other in all_samples {
                if positives.contains(&other.subscriber) {
                    continue;
                }
                if time_bucket(other.timestamp, bucket_width)? != bucket {
                    continue;
                }
                let d = s.position.distance(&other.position)?;
                if d <= distance {
                    events.insert(traj.subscriber(), &other.subscriber, bucket, d);
                }
            }
        }
    }
    Ok(events.into_events())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectEntry {
    pub contact_number: PhoneNumber,
    pub event_count: usize,
    pub distinct_infected: usize,
    /// Start of the earliest contact bucket, epoch seconds.
    pub first_seen: i64,
    /// Start of the latest contact bucket, epoch seconds.
    pub last_seen: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuspectReport {
    /// One entry per contact number, ordered by number.
    pub entries: Vec<SuspectEntry>,
    /// Numbers whose event count reached the multiplicity threshold.
    pub flagged: Vec<PhoneNumber>,
}

pub fn aggregate_suspects(events: &[ContactEvent], threshold: usize) -> Result<SuspectReport, TraceError> {
    if threshold < 1 {
        return Err(TraceError::Threshold);
    }
    struct Acc<'a> {
        count: usize,
        infected: BTreeSet<&'a PhoneNumber>,
        first: i64,
        last: i64,
    }
    let mut acc: BTreeMap<&PhoneNumber, Acc> = BTreeMap::new();
    for e in events {
        let start = e.bucket.index * e.bucket.width;
        let a = acc.entry(&e.contact_number).or_insert(Acc {
            count: 0,
            infected: BTreeSet::new(),
            first: start,
            last: start,
        });
        a.count += 1;
        a.infected.insert(&e.infected_number);
        a.first = a.first.min(start);
        a.last = a.last.max(start);
    }
    let entries: Vec<SuspectEntry> = acc
        .into_iter()
        .map(|(n, a)| SuspectEntry {
            contact_number: n.clone(),
            event_count: a.count,
            distinct_infected: a.infected.len(),
            first_seen: a.first,
            last_seen: a.last,
        })
        .collect();
    let flagged = entries
        .iter()
        .filter(|e| e.event_count >= threshold)
        .map(|e| e.contact_number.clone())
        .collect();
    Ok(SuspectReport { entries, flagged })
}

/// Displaces every sample by independent Gaussian noise with standard
/// deviation `sigma_m` meters per axis. Planar samples are converted at
/// [`METERS_PER_PLANAR_UNIT`]; geographic samples are displaced north/east.
pub fn inject_position_noise<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    sigma_m: f64,
    rng: &mut R,
) -> Result<Trajectory, TraceError> {
    if !sigma_m.is_finite() || sigma_m < 0.0 {
        return Err(TraceError::Sigma(sigma_m));
    }
    if sigma_m == 0.0 {
        return Ok(trajectory.clone());
    }
    let normal = Normal::new(0.0, sigma_m).map_err(|_| TraceError::Sigma(sigma_m))?;
    let mut samples = Vec::with_capacity(trajectory.len());
    for s in trajectory.samples() {
        let east = normal.sample(rng);
        let north = normal.sample(rng);
        let position = match s.position {
            Position::Planar(p) => Position::Planar(PlanarPoint::new(
                p.x + east / METERS_PER_PLANAR_UNIT,
                p.y + north / METERS_PER_PLANAR_UNIT,
            )),
            Position::Geo(g) => {
                let lat = (g.lat() + north / METERS_PER_DEGREE).clamp(-90.0, 90.0);
                let cos_lat = g.lat().to_radians().cos().max(1e-9);
                let lon = g.lon() + east / (METERS_PER_DEGREE * cos_lat);
                let lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
                Position::Geo(GeoCoordinate::new(lat, lon)?)
            }
        };
        samples.push(LocationSample::new(s.subscriber.clone(), s.timestamp, position));
    }
    Ok(Trajectory {
        subscriber: trajectory.subscriber.clone(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub samples: Vec<LocationSample>,
    /// 1-based line number of each accepted sample.
    pub sample_lines: Vec<usize>,
    pub rejected: Vec<RejectedLine>,
}

/// Parses line-delimited sample records. Blank lines are skipped; every other
/// malformed line is reported with its number. Mixed coordinate modes are
/// rejected against the mode of the first accepted line.
pub fn parse_samples<R: BufRead>(reader: R) -> std::io::Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut mode = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| RejectedLine { line: i + 1, reason };
        match serde_json::from_str::<LocationSample>(&line) {
            Ok(s) => {
                let m = s.position.mode();
                match mode {
                    Some(expected) if expected != m => {
                        report
                            .rejected
                            .push(reject(format!("coordinate mode {m:?} differs from {expected:?}")));
                    }
                    _ => {
                        mode = Some(m);
                        report.samples.push(s);
                        report.sample_lines.push(i + 1);
                    }
                }
            }
            Err(e) => report.rejected.push(reject(e.to_string())),
        }
    }
    Ok(report)
}

/// Groups samples into per-subscriber trajectories. Samples with a timestamp
/// already seen for that subscriber are returned as duplicates.
pub fn group_trajectories(samples: Vec<LocationSample>) -> (BTreeMap<PhoneNumber, Trajectory>, Vec<LocationSample>) {
    let mut grouped: BTreeMap<PhoneNumber, BTreeMap<i64, LocationSample>> = BTreeMap::new();
    let mut duplicates = Vec::new();
    for s in samples {
        let slot = grouped.entry(s.subscriber.clone()).or_default();
        match slot.entry(s.timestamp) {
            std::collections::btree_map::Entry::Occupied(_) => duplicates.push(s),
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(s);
            }
        }
    }
    let trajectories = grouped
        .into_iter()
        .map(|(n, by_time)| {
            let t = Trajectory {
                subscriber: n.clone(),
                samples: by_time.into_values().collect(),
            };
            (n, t)
        })
        .collect();
    (trajectories, duplicates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{derive_stream, StreamRole};

    fn num(s: &str) -> PhoneNumber {
        PhoneNumber::parse(s).unwrap()
    }

    fn geo(lat: f64, lon: f64) -> Position {
        Position::Geo(GeoCoordinate::new(lat, lon).unwrap())
    }

    fn planar(x: f64, y: f64) -> Position {
        Position::Planar(PlanarPoint::new(x, y))
    }

    fn sample(n: &str, t: i64, p: Position) -> LocationSample {
        LocationSample::new(num(n), t, p)
    }

    const A: &str = "+10000000001";
    const B: &str = "+10000000002";
    const C: &str = "+10000000003";

    #[test]
    fn empty_index_and_single_sample() {
        let idx = build_spatial_index(vec![], 2.0, 300, 2.0).unwrap();
        assert!(idx.is_empty());
        assert!(idx.query_radius(&geo(0.0, 0.0), 0, 2.0).unwrap().is_empty());

        let s = sample(A, 10, geo(23.7, 90.4));
        let idx = build_spatial_index(vec![s.clone()], 2.0, 300, 2.0).unwrap();
        assert_eq!(idx.cell_members(&s.position, 0), &[0]);
        assert_eq!(idx.query_radius(&s.position, 0, 2.0).unwrap(), vec![(0, 0.0)]);
    }

    #[test]
    fn cell_smaller_than_distance_rejected() {
        assert!(matches!(
            build_spatial_index(vec![], 1.0, 300, 2.0),
            Err(TraceError::CellTooSmall { .. })
        ));
        let idx = build_spatial_index(vec![], 2.0, 300, 2.0).unwrap();
        assert!(idx.query_radius(&geo(0.0, 0.0), 0, 3.0).is_err());
    }

    #[test]
    fn mixed_modes_rejected() {
        let err = build_spatial_index(
            vec![sample(A, 0, geo(0.0, 0.0)), sample(B, 0, planar(0.0, 0.0))],
            2.0,
            300,
            2.0,
        );
        assert!(matches!(err, Err(TraceError::ModeMismatch { .. })));

        let idx = build_spatial_index(vec![sample(B, 0, geo(0.0, 0.0))], 2.0, 300, 2.0).unwrap();
        let infected = Trajectory::new(num(A), vec![sample(A, 0, planar(0.0, 0.0))]).unwrap();
        assert!(matches!(
            find_contacts(&[infected], &idx, 2.0, 300),
            Err(TraceError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn no_infected_no_events() {
        let idx = build_spatial_index(vec![sample(B, 0, geo(0.0, 0.0))], 2.0, 300, 2.0).unwrap();
        assert!(find_contacts(&[], &idx, 2.0, 300).unwrap().is_empty());
    }

    #[test]
    fn same_bucket_contact() {
        let infected = Trajectory::new(num(A), vec![sample(A, 100, geo(0.0, 0.0))]).unwrap();
        let contact = sample(B, 150, geo(0.00001, 0.0));
        let idx = build_spatial_index(vec![contact], 2.0, 300, 2.0).unwrap();
        let events = find_contacts(std::slice::from_ref(&infected), &idx, 2.0, 300).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].bucket.index, 0);
        assert_eq!(events[0].contact_number, num(B));
        // 1e-5 degrees of meridian at R = 6371 km
        assert!((events[0].distance - 1.111_949_266).abs() < 1e-6);

        let late = sample(B, 450, geo(0.00001, 0.0));
        let idx = build_spatial_index(vec![late], 2.0, 300, 2.0).unwrap();
        assert!(find_contacts(&[infected], &idx, 2.0, 300).unwrap().is_empty());
    }

    #[test]
    fn duplicate_events_keep_minimum_distance() {
        let infected = Trajectory::new(
            num(A),
            vec![sample(A, 0, planar(0.0, 0.0)), sample(A, 10, planar(0.5, 0.0))],
        )
        .unwrap();
        let others = vec![sample(B, 5, planar(0.4, 0.0)), sample(B, 20, planar(0.45, 0.0))];
        let idx = build_spatial_index(others.clone(), 1.0, 300, 1.0).unwrap();
        let events = find_contacts(std::slice::from_ref(&infected), &idx, 1.0, 300).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].distance - 0.05).abs() < 1e-12);
        assert_eq!(events, brute_force_contacts(&[infected], &others, 1.0, 300).unwrap());
    }

    #[test]
    fn infected_contacts_and_self_excluded() {
        let a = Trajectory::new(num(A), vec![sample(A, 0, planar(0.0, 0.0))]).unwrap();
        let b = Trajectory::new(num(B), vec![sample(B, 0, planar(0.1, 0.0))]).unwrap();
        let all = vec![
            sample(A, 0, planar(0.0, 0.0)),
            sample(B, 0, planar(0.1, 0.0)),
            sample(C, 0, planar(0.2, 0.0)),
        ];
        let idx = build_spatial_index(all.clone(), 0.5, 300, 0.5).unwrap();
        let events = find_contacts(&[a.clone(), b.clone()], &idx, 0.5, 300).unwrap();
        assert!(events.iter().all(|e| e.contact_number == num(C)));
        assert_eq!(events.len(), 2);
        assert_eq!(events, brute_force_contacts(&[a, b], &all, 0.5, 300).unwrap());
    }

    #[test]
    fn brute_force_trivial_cases() {
        assert!(brute_force_contacts(&[], &[], 2.0, 300).unwrap().is_empty());
        let a = Trajectory::new(num(A), vec![sample(A, 0, planar(0.0, 0.0))]).unwrap();
        let events = brute_force_contacts(&[a], &[sample(B, 1, planar(0.0, 0.01))], 0.02, 300).unwrap();
        assert_eq!(events.len(), 1);
    }

    #[test]
    fn bucket_width_mismatch_rejected() {
        let idx = build_spatial_index(vec![], 2.0, 300, 2.0).unwrap();
        assert!(matches!(
            find_contacts(&[], &idx, 2.0, 60),
            Err(TraceError::BucketMismatch { .. })
        ));
    }

    fn event(i: &str, c: &str, b: i64) -> ContactEvent {
        ContactEvent {
            infected_number: num(i),
            contact_number: num(c),
            bucket: TimeBucket { index: b, width: 300 },
            distance: 1.0,
        }
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_suspects(&[], 2).unwrap(), SuspectReport::default());

        let r = aggregate_suspects(&[event(A, B, 0), event(C, B, 4)], 2).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.flagged, vec![num(B)]);
        let e = &r.entries[0];
        assert_eq!(
            (e.event_count, e.distinct_infected, e.first_seen, e.last_seen),
            (2, 2, 0, 1200)
        );

        let r = aggregate_suspects(&[event(A, B, 0), event(A, C, 0), event(B, A, 0)], 2).unwrap();
        assert_eq!(r.entries.len(), 3);
        assert!(r.flagged.is_empty());

        assert!(matches!(aggregate_suspects(&[], 0), Err(TraceError::Threshold)));
    }

    #[test]
    fn aggregation_order_independent() {
        let mut events = vec![
            event(A, B, 0),
            event(A, B, 1),
            event(C, B, 1),
            event(A, C, 7),
            event(B, C, 2),
        ];
        let base = aggregate_suspects(&events, 2).unwrap();
        events.reverse();
        assert_eq!(aggregate_suspects(&events, 2).unwrap(), base);
        events.swap(0, 3);
        assert_eq!(aggregate_suspects(&events, 2).unwrap(), base);
        let total: usize = base.entries.iter().map(|e| e.event_count).sum();
        assert_eq!(total, events.len());
    }

    fn equator_track(n: usize) -> Trajectory {
        let samples = (0..n)
            .map(|i| sample(A, i as i64 * 60, geo(0.001 * (i % 7) as f64, 0.002)))
            .collect();
        Trajectory::new(num(A), samples).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = equator_track(20);
        let mut rng = derive_stream(1, 0, StreamRole::PositionNoise);
        assert_eq!(inject_position_noise(&t, 0.0, &mut rng).unwrap(), t);
        assert!(matches!(
            inject_position_noise(&t, -1.0, &mut rng),
            Err(TraceError::Sigma(_))
        ));
    }

    #[test]
    fn noise_rms_matches_sigma() {
        let t = equator_track(10_000);
        let mut rng = derive_stream(1, 0, StreamRole::PositionNoise);
        let noisy = inject_position_noise(&t, 50.0, &mut rng).unwrap();
        let (mut north, mut east) = (0.0, 0.0);
        for (a, b) in t.samples().iter().zip(noisy.samples()) {
            let (Position::Geo(a), Position::Geo(b)) = (a.position, b.position) else {
                unreachable!()
            };
            let dn = (b.lat() - a.lat()) * METERS_PER_DEGREE;
            let de = (b.lon() - a.lon()) * METERS_PER_DEGREE * a.lat().to_radians().cos();
            north += dn * dn;
            east += de * de;
        }
        let n = t.len() as f64;
        let (rms_n, rms_e) = ((north / n).sqrt(), (east / n).sqrt());
        assert!((49.0..=51.0).contains(&rms_n), "{rms_n}");
        assert!((49.0..=51.0).contains(&rms_e), "{rms_e}");

        let mut again = derive_stream(1, 0, StreamRole::PositionNoise);
        assert_eq!(inject_position_noise(&t, 50.0, &mut again).unwrap(), noisy);
    }

    #[test]
    fn trajectory_invariants() {
        let bad = Trajectory::new(
            num(A),
            vec![sample(A, 5, planar(0.0, 0.0)), sample(A, 5, planar(0.1, 0.0))],
        );
        assert!(matches!(bad, Err(TraceError::Unordered { .. })));
        let foreign = Trajectory::new(num(A), vec![sample(B, 5, planar(0.0, 0.0))]);
        assert!(matches!(foreign, Err(TraceError::ForeignSample { .. })));
        let mixed = Trajectory::new(
            num(A),
            vec![sample(A, 1, planar(0.0, 0.0)), sample(A, 2, geo(0.0, 0.0))],
        );
        assert!(matches!(mixed, Err(TraceError::ModeMismatch { .. })));

        let t = equator_track(10);
        let (clipped, dropped) = t.clip(60, 300);
        assert_eq!((clipped.len(), dropped), (5, 5));
    }

    #[test]
    fn ingestion_reports_bad_lines() {
        let input = format!(
            "{}\n\n{}\nnot json\n{}\n{}\n",
            r#"{"subscriber":"+10000000001","timestamp":5,"lat":23.7,"lon":90.4}"#,
            r#"{"subscriber":"+10000000002","timestamp":6,"lat":23.7,"lon":90.4}"#,
            r#"{"subscriber":"+10000000002","timestamp":7,"x":0.1,"y":0.2}"#,
            r#"{"subscriber":"123","timestamp":8,"lat":1,"lon":2}"#,
        );
        let report = parse_samples(input.as_bytes()).unwrap();
        assert_eq!(report.samples.len(), 2);
        let lines: Vec<_> = report.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![4, 5, 6]);
    }

    #[test]
    fn sample_record_roundtrip() {
        let s = sample(A, 5, planar(0.25, -0.5));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"subscriber":"+10000000001","timestamp":5,"x":0.25,"y":-0.5}"#);
        assert_eq!(serde_json::from_str::<LocationSample>(&json).unwrap(), s);
        assert!(
            serde_json::from_str::<LocationSample>(r#"{"subscriber":"+10000000001","timestamp":5,"x":1}"#).is_err()
        );
        assert!(serde_json::from_str::<LocationSample>(
            r#"{"subscriber":"+10000000001","timestamp":5,"lat":1,"lon":2,"x":1,"y":1}"#
        )
        .is_err());
    }

    #[test]
    fn grouping_sorts_and_reports_duplicates() {
        let (groups, dups) = group_trajectories(vec![
            sample(A, 9, planar(0.0, 0.0)),
            sample(A, 3, planar(0.0, 0.0)),
            sample(B, 1, planar(0.0, 0.0)),
            sample(A, 9, planar(0.5, 0.0)),
        ]);
        assert_eq!(dups.len(), 1);
        let ts: Vec<_> = groups[&num(A)].samples().iter().map(|s| s.timestamp).collect();
        assert_eq!(ts, vec![3, 9]);
    }
}
