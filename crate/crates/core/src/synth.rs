//! Seeded synthetic deployments for tests and demos.
//!
//! Subscribers move inside a small square so that contacts within a few
//! meters actually occur, with timestamps confined to a short span so that
//! many samples share a time bucket.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geo::{GeoCoordinate, PlanarPoint};
use crate::opnet::{OperatorId, OperatorNode, PositiveReport, POSITIVES_FILE, TRAJECTORY_FILE};
use crate::phone::PhoneNumber;
use crate::seed::{derive_stream, StreamRole};
use crate::trace::{group_trajectories, CoordMode, LocationSample, Position};

/// Origin of generated geographic samples.
const GEO_ORIGIN: (f64, f64) = (52.2296, 21.0122);
const METERS_PER_DEGREE_LAT: f64 = 111_194.926_644_558_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub mode: CoordMode,
    pub operators: usize,
    pub subscribers: usize,
    /// Upper bound on samples per subscriber; each draws 1..=max.
    pub max_samples: usize,
    pub positives: usize,
    /// Side of the square the samples fall in: meters for geographic mode,
    /// scaled units for planar mode.
    pub extent: f64,
    /// Timestamps are drawn from `[0, time_span)`.
    pub time_span: i64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            mode: CoordMode::Geo,
            operators: 3,
            subscribers: 30,
            max_samples: 12,
            positives: 3,
            extent: 20.0,
            time_span: 1_800,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Deployment {
    /// Samples per operator, in operator order.
    pub samples: Vec<(OperatorId, Vec<LocationSample>)>,
    pub positives: Vec<PositiveReport>,
}

impl Deployment {
    pub fn operator_nodes(&self) -> Vec<OperatorNode> {
        self.samples
            .iter()
            .map(|(id, s)| OperatorNode::from_samples(id.clone(), s.clone()))
            .collect()
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &LocationSample> {
        self.samples.iter().flat_map(|(_, s)| s)
    }

    /// Writes the deployment as a fixture directory readable by
    /// [`crate::opnet::load_fixture`].
    pub fn write_fixture(&self, dir: &Path) -> std::io::Result<()> {
        for (id, samples) in &self.samples {
            let op_dir = dir.join(&id.0);
            fs::create_dir_all(&op_dir)?;
            let mut out = BufWriter::new(fs::File::create(op_dir.join(TRAJECTORY_FILE))?);
            for s in samples {
                serde_json::to_writer(&mut out, s)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        let mut out = BufWriter::new(fs::File::create(dir.join(POSITIVES_FILE))?);
        for p in &self.positives {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Subscriber `i` gets a fixed, valid number.
pub fn subscriber_number(i: usize) -> PhoneNumber {
    PhoneNumber::parse(&format!("+4860{:07}", i)).expect("generated numbers are valid")
}

/// Uniform position in the configured square.
pub fn random_position<R: Rng + ?Sized>(mode: CoordMode, extent: f64, rng: &mut R) -> Position {
    let a = rng.random_range(0.0..extent);
    let b = rng.random_range(0.0..extent);
    match mode {
        CoordMode::Planar => Position::Planar(PlanarPoint::new(a, b)),
        CoordMode::Geo => {
            let (lat0, lon0) = GEO_ORIGIN;
            let lat = lat0 + a / METERS_PER_DEGREE_LAT;
            let lon = lon0 + b / (METERS_PER_DEGREE_LAT * lat0.to_radians().cos());
            Position::Geo(GeoCoordinate::new(lat, lon).expect("generated coordinates are in range"))
        }
    }
}

/// Random samples for `subscribers` numbers, with unique timestamps per
/// subscriber and `total` samples overall.
pub fn random_samples<R: Rng + ?Sized>(
    mode: CoordMode,
    subscribers: usize,
    total: usize,
    extent: f64,
    time_span: i64,
    rng: &mut R,
) -> Vec<LocationSample> {
    assert!(subscribers > 0 && time_span > 0);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(total);
    // the caller is expected to keep total well below subscribers * time_span
    while out.len() < total {
        let who = rng.random_range(0..subscribers);
        let t = rng.random_range(0..time_span);
        if seen.insert((who, t)) {
            out.push(LocationSample::new(
                subscriber_number(who),
                t,
                random_position(mode, extent, rng),
            ));
        }
    }
    out
}

/// Deployment number `index` under `root_seed`.
pub fn random_deployment(root_seed: u64, index: u64, config: &DeploymentConfig) -> Deployment {
    assert!(config.operators > 0 && config.subscribers > 0);
    let mut rng = derive_stream(root_seed, index, StreamRole::Fixture);
    let mut per_op: Vec<Vec<LocationSample>> = vec![Vec::new(); config.operators];
    for i in 0..config.subscribers {
        let op = rng.random_range(0..config.operators);
        let n = rng.random_range(1..=config.max_samples.max(1));
        let mut times: Vec<i64> = (0..n).map(|_| rng.random_range(0..config.time_span)).collect();
        times.sort_unstable();
        times.dedup();
        for t in times {
            let p = random_position(config.mode, config.extent, &mut rng);
            per_op[op].push(LocationSample::new(subscriber_number(i), t, p));
        }
    }
    let mut positives = Vec::with_capacity(config.positives);
    for _ in 0..config.positives {
        let who = rng.random_range(0..config.subscribers);
        positives.push(PositiveReport {
            number: subscriber_number(who),
            reported_at: rng.random_range(0..config.time_span),
        });
    }
    let samples = per_op
        .into_iter()
        .enumerate()
        .map(|(i, s)| (OperatorId(format!("op{i}")), s))
        .collect();
    Deployment { samples, positives }
}

/// Groups samples by subscriber; the generators never emit duplicates.
pub fn trajectories_of(samples: Vec<LocationSample>) -> Vec<crate::trace::Trajectory> {
    let (t, dups) = group_trajectories(samples);
    debug_assert!(dups.is_empty());
    t.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opnet::load_fixture;

    #[test]
    fn deployments_are_reproducible() {
        let cfg = DeploymentConfig::default();
        let a = random_deployment(1, 0, &cfg);
        let b = random_deployment(1, 0, &cfg);
        let c = random_deployment(1, 1, &cfg);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.positives, b.positives);
        assert_ne!(a.samples, c.samples);
        assert_eq!(a.samples.len(), 3);
        assert_eq!(a.positives.len(), 3);
    }

    #[test]
    fn geo_positions_stay_in_extent() {
        let mut rng = derive_stream(5, 0, StreamRole::Fixture);
        let origin = Position::Geo(GeoCoordinate::new(GEO_ORIGIN.0, GEO_ORIGIN.1).unwrap());
        for _ in 0..1000 {
            let p = random_position(CoordMode::Geo, 20.0, &mut rng);
            assert!(origin.distance(&p).unwrap() <= 20.0 * 2f64.sqrt() + 1e-6);
        }
    }

    #[test]
    fn fixture_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = random_deployment(9, 2, &DeploymentConfig::default());
        d.write_fixture(dir.path()).unwrap();
        let f = load_fixture(dir.path()).unwrap();
        assert_eq!(f.positives, d.positives);
        let loaded: Vec<LocationSample> = f.operators.iter().flat_map(|o| o.all_samples().cloned()).collect();
        let mut expected: Vec<LocationSample> = d.all_samples().cloned().collect();
        let key = |s: &LocationSample| (s.subscriber.clone(), s.timestamp);
        expected.sort_by_key(key);
        let mut loaded = loaded;
        loaded.sort_by_key(key);
        assert_eq!(loaded, expected);
    }

    #[test]
    fn random_samples_unique_per_subscriber() {
        let mut rng = derive_stream(3, 0, StreamRole::Fixture);
        let s = random_samples(CoordMode::Planar, 10, 400, 0.2, 600, &mut rng);
        assert_eq!(s.len(), 400);
        let (_, dups) = group_trajectories(s);
        assert!(dups.is_empty());
    }
}
