//! Poisson point process comparison between smartphone-only and any-phone
//! contact tracing.
//!
//! Each trial draws two independent populations on the unit disk (1.0 =
//! 100 m), one with the smartphone density and one with the any-phone
//! density, marks a fraction of each as positive, and counts the
//! non-positive points lying within the contact radius of some positive.
//!
//! Disk sampling uses rejection: `(x, y)` uniform on `[-1, 1]²`, kept when
//! `x² + y² ≤ 1`. This choice fixes the seeded streams; see [`crate::seed`]
//! for how each trial and population gets its own stream.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{euclidean_distance, PlanarPoint};
use crate::seed::{derive_stream, StreamRole};

/// Radius of the simulated region in scaled units.
pub const REGION_RADIUS: f64 = 1.0;

// Grid cells are made a hair wider than the query radius so that rounding in
// `coord / cell` can never push two in-range points two cells apart.
const CELL_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("density must be finite and non-negative, got {0}")]
    Density(f64),
    #[error("any-phone density {all} is below smartphone density {smart}")]
    DensityOrder { all: f64, smart: f64 },
    #[error("infection rate must lie in [0, 1], got {0}")]
    InfectionRate(f64),
    #[error("contact radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("covariance needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("infected index {index} out of range for {len} points")]
    InfectedIndex { index: usize, len: usize },
    #[error("duplicate infected index {0}")]
    DuplicateInfected(usize),
    #[error("point ({x}, {y}) lies outside the unit disk")]
    OutsideRegion { x: f64, y: f64 },
    #[error("nothing to emit: result set is empty")]
    EmptyResults,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub density_all: f64,
    pub density_smart: f64,
    pub infection_rate: f64,
    pub contact_radius: f64,
    pub region_radius: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for d in [self.density_all, self.density_smart] {
            check_density(d)?;
        }
        if self.density_all < self.density_smart {
            return Err(SimError::DensityOrder {
                all: self.density_all,
                smart: self.density_smart,
            });
        }
        check_rate(self.infection_rate)?;
        check_radius(self.contact_radius)?;
        if self.trials == 0 {
            return Err(SimError::NoTrials);
        }
        Ok(())
    }

    pub fn for_scenario(scenario: &CountryScenario, contact_radius: f64, trials: usize, seed: u64) -> Self {
        SimConfig {
            density_all: scenario.density_all,
            density_smart: scenario.density_smart,
            infection_rate: scenario.infection_rate,
            contact_radius,
            region_radius: REGION_RADIUS,
            trials,
            seed,
        }
    }
}

fn check_density(d: f64) -> Result<(), SimError> {
    if !d.is_finite() || d < 0.0 {
        return Err(SimError::Density(d));
    }
    Ok(())
}

fn check_rate(p: f64) -> Result<(), SimError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SimError::InfectionRate(p));
    }
    Ok(())
}

fn check_radius(r: f64) -> Result<(), SimError> {
    if !r.is_finite() || r <= 0.0 {
        return Err(SimError::Radius(r));
    }
    Ok(())
}

/// Points on the unit disk plus the indices of the ones marked positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Population {
    points: Vec<PlanarPoint>,
    infected: Vec<usize>,
}

impl Population {
    pub fn new(points: Vec<PlanarPoint>, mut infected: Vec<usize>) -> Result<Self, SimError> {
        if let Some(p) = points
            .iter()
            .find(|p| !p.norm_sq().is_finite() || p.norm_sq() > REGION_RADIUS * REGION_RADIUS)
        {
            return Err(SimError::OutsideRegion { x: p.x, y: p.y });
        }
        infected.sort_unstable();
        for w in infected.windows(2) {
            if w[0] == w[1] {
                return Err(SimError::DuplicateInfected(w[0]));
            }
        }
        if let Some(&index) = infected.last().filter(|&&i| i >= points.len()) {
            return Err(SimError::InfectedIndex {
                index,
                len: points.len(),
            });
        }
        Ok(Population { points, infected })
    }

    pub fn from_points(points: Vec<PlanarPoint>) -> Result<Self, SimError> {
        Population::new(points, Vec::new())
    }

    pub fn points(&self) -> &[PlanarPoint] {
        &self.points
    }

    /// Sorted indices of infected points.
    pub fn infected(&self) -> &[usize] {
        &self.infected
    }

    pub fn infected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.points.len()];
        for &i in &self.infected {
            mask[i] = true;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `N ~ Poisson(density)` points uniformly on the unit disk.
pub fn sample_ppp<R: Rng + ?Sized>(density: f64, rng: &mut R) -> Result<Vec<PlanarPoint>, SimError> {
    check_density(density)?;
    if density == 0.0 {
        return Ok(Vec::new());
    }
    let poisson = Poisson::new(density).map_err(|_| SimError::Density(density))?;
    let n = poisson.sample(rng) as usize;
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let x = rng.random_range(-REGION_RADIUS..=REGION_RADIUS);
        let y = rng.random_range(-REGION_RADIUS..=REGION_RADIUS);
        let p = PlanarPoint::new(x, y);
        if p.norm_sq() <= REGION_RADIUS * REGION_RADIUS {
            points.push(p);
        }
    }
    Ok(points)
}

/// Marks each point positive independently with probability `rate`,
/// replacing any earlier marking.
pub fn mark_infected<'a, R: Rng + ?Sized>(
    population: &'a mut Population,
    rate: f64,
    rng: &mut R,
) -> Result<&'a [usize], SimError> {
    check_rate(rate)?;
    population.infected = (0..population.points.len()).filter(|_| rng.random_bool(rate)).collect();
    Ok(&population.infected)
}

/// Number of non-infected points within `radius` of at least one infected
/// point. Each point counts at most once.
pub fn count_contacts(population: &Population, radius: f64) -> Result<usize, SimError> {
    count_contacts_masked(&population.points, &population.infected_mask(), radius)
}

/// [`count_contacts`] over raw slices; no region constraint on the points.
pub fn count_contacts_masked(points: &[PlanarPoint], infected: &[bool], radius: f64) -> Result<usize, SimError> {
    check_radius(radius)?;
    assert_eq!(points.len(), infected.len(), "mask length must match point count");
    let cell = radius * (1.0 + CELL_SLACK);
    let key = |p: &PlanarPoint| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);

    let mut grid: HashMap<(i64, i64), Vec<PlanarPoint>> = HashMap::new();
    for (p, _) in points.iter().zip(infected).filter(|(_, &inf)| inf) {
        grid.entry(key(p)).or_default().push(*p);
    }
    if grid.is_empty() {
        return Ok(0);
    }

    let count = points
        .iter()
        .zip(infected)
        .filter(|(_, &inf)| !inf)
        .filter(|(p, _)| {
            let (cx, cy) = key(p);
            (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    grid.get(&(cx + dx, cy + dy))
                        .is_some_and(|cell| cell.iter().any(|q| euclidean_distance(**p, *q) <= radius))
                })
            })
        })
        .count();
    Ok(count)
}

/// Absolute sample covariance of the x and y coordinates (n − 1 denominator).
pub fn coordinate_covariance(points: &[PlanarPoint]) -> Result<f64, SimError> {
    let n = points.len();
    if n < 2 {
        return Err(SimError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.y).sum::<f64>() / nf;
    let s: f64 = points.iter().map(|p| (p.x - mx) * (p.y - my)).sum();
    Ok((s / (nf - 1.0)).abs())
}

/// Percentage change of the any-phone count relative to the smartphone count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PercentChange {
    Defined(f64),
    /// The smartphone count was zero.
    Undefined,
}

impl PercentChange {
    pub fn value(self) -> Option<f64> {
        match self {
            PercentChange::Defined(v) => Some(v),
            PercentChange::Undefined => None,
        }
    }
}

impl fmt::Display for PercentChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PercentChange::Defined(v) => write!(f, "{v}"),
            PercentChange::Undefined => f.write_str("undefined"),
        }
    }
}

pub fn percentage_change(count_all: usize, count_smart: usize) -> PercentChange {
    if count_smart == 0 {
        return PercentChange::Undefined;
    }
    let (all, smart) = (count_all as f64, count_smart as f64);
    PercentChange::Defined(100.0 * (all - smart) / smart)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub count_all: usize,
    pub count_smart: usize,
    pub pct_change: PercentChange,
    /// `None` when the population had fewer than two points.
    pub cov_all: Option<f64>,
    pub cov_smart: Option<f64>,
}

/// A trial result together with the populations that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDetail {
    pub result: TrialResult,
    pub smart: Population,
    pub all: Population,
}

fn draw_population(config: &SimConfig, trial_index: usize, role: StreamRole) -> Result<Population, SimError> {
    let density = match role {
        StreamRole::Smartphone => config.density_smart,
        _ => config.density_all,
    };
    let mut rng = derive_stream(config.seed, trial_index as u64, role);
    let mut population = Population::from_points(sample_ppp(density, &mut rng)?)?;
    mark_infected(&mut population, config.infection_rate, &mut rng)?;
    Ok(population)
}

fn covariance_or_none(points: &[PlanarPoint]) -> Option<f64> {
    coordinate_covariance(points).ok()
}

pub fn run_trial_detailed(config: &SimConfig, trial_index: usize) -> Result<TrialDetail, SimError> {
    config.validate()?;
    let smart = draw_population(config, trial_index, StreamRole::Smartphone)?;
    let all = draw_population(config, trial_index, StreamRole::AnyPhone)?;
    let count_smart = count_contacts(&smart, config.contact_radius)?;
    let count_all = count_contacts(&all, config.contact_radius)?;
    let result = TrialResult {
        trial_index,
        count_all,
        count_smart,
        pct_change: percentage_change(count_all, count_smart),
        cov_all: covariance_or_none(all.points()),
        cov_smart: covariance_or_none(smart.points()),
    };
    Ok(TrialDetail { result, smart, all })
}

/// One trial, fully determined by `(config.seed, trial_index)`.
pub fn run_trial(config: &SimConfig, trial_index: usize) -> Result<TrialResult, SimError> {
    run_trial_detailed(config, trial_index).map(|d| d.result)
}

/// Runs `config.trials` trials in parallel; results come back ordered by index.
pub fn run_trials(config: &SimConfig) -> Result<Vec<TrialResult>, SimError> {
    config.validate()?;
    (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial(config, i))
        .collect()
}

pub fn run_trials_detailed(config: &SimConfig) -> Result<Vec<TrialDetail>, SimError> {
    config.validate()?;
    (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial_detailed(config, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryScenario {
    pub name: String,
    pub density_all: f64,
    pub density_smart: f64,
    pub infection_rate: f64,
}

impl CountryScenario {
    pub fn bangladesh() -> Self {
        CountryScenario::new("bd", 100.0, 58.0, 0.18)
    }

    pub fn india() -> Self {
        CountryScenario::new("in", 64.0, 24.0, 0.0416)
    }

    pub fn south_korea() -> Self {
        CountryScenario::new("kr", 100.0, 95.0, 0.0106)
    }

    pub fn presets() -> [CountryScenario; 3] {
        [Self::bangladesh(), Self::india(), Self::south_korea()]
    }

    /// Looks up a preset by its two-letter code (`bd`, `in`, `kr`).
    pub fn preset(code: &str) -> Option<Self> {
        Self::presets().into_iter().find(|s| s.name == code)
    }

    pub fn new(name: &str, density_all: f64, density_smart: f64, infection_rate: f64) -> Self {
        CountryScenario {
            name: name.to_string(),
            density_all,
            density_smart,
            infection_rate,
        }
    }
}

/// Aggregate of many trials of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub trials: usize,
    pub mean_count_all: f64,
    pub mean_count_smart: f64,
    /// Mean of the per-trial percentage changes over trials where it is defined.
    pub mean_pct_change: Option<f64>,
    pub undefined_trials: usize,
    /// Percentage change between the two mean counts.
    pub pct_change_of_means: Option<f64>,
    pub mean_cov_all: Option<f64>,
    pub mean_cov_smart: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(name: &str, results: &[TrialResult]) -> ScenarioSummary {
    let n = results.len().max(1) as f64;
    let mean_count_all = results.iter().map(|r| r.count_all as f64).sum::<f64>() / n;
    let mean_count_smart = results.iter().map(|r| r.count_smart as f64).sum::<f64>() / n;
    let pct_change_of_means =
        (mean_count_smart > 0.0).then(|| 100.0 * (mean_count_all - mean_count_smart) / mean_count_smart);
    ScenarioSummary {
        name: name.to_string(),
        trials: results.len(),
        mean_count_all,
        mean_count_smart,
        mean_pct_change: mean(results.iter().filter_map(|r| r.pct_change.value())),
        undefined_trials: results
            .iter()
            .filter(|r| r.pct_change == PercentChange::Undefined)
            .count(),
        pct_change_of_means,
        mean_cov_all: mean(results.iter().filter_map(|r| r.cov_all)),
        mean_cov_smart: mean(results.iter().filter_map(|r| r.cov_smart)),
    }
}

pub fn run_scenario(
    scenario: &CountryScenario,
    contact_radius: f64,
    trials: usize,
    seed: u64,
) -> Result<ScenarioSummary, SimError> {
    let config = SimConfig::for_scenario(scenario, contact_radius, trials, seed);
    let results = run_trials(&config)?;
    Ok(summarize(&scenario.name, &results))
}

pub const SCATTER_FILE: &str = "scatter.csv";
pub const COUNTS_FILE: &str = "counts.csv";
pub const COVARIANCE_FILE: &str = "covariance.csv";
pub const SCENARIO_FILE: &str = "scenarios.csv";

/// Everything one experiment run writes out.
#[derive(Debug, Clone, Default)]
pub struct ExperimentResults {
    pub trials: Vec<TrialDetail>,
    pub scenarios: Vec<ScenarioSummary>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), SimError> {
    let csv_err = |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the scatter, counts, covariance and scenario CSVs into `dir` and
/// returns their paths. Output depends only on `results`.
pub fn emit_results(results: &ExperimentResults, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    if results.trials.is_empty() && results.scenarios.is_empty() {
        return Err(SimError::EmptyResults);
    }
    fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut trials: Vec<&TrialDetail> = results.trials.iter().collect();
    trials.sort_by_key(|t| t.result.trial_index);

    let scatter = dir.join(SCATTER_FILE);
    let scatter_rows = trials.iter().flat_map(|t| {
        [("smart", &t.smart), ("all", &t.all)]
            .into_iter()
            .flat_map(move |(role, pop)| {
                let mask = pop.infected_mask();
                pop.points().iter().zip(mask).map(move |(p, inf)| {
                    vec![
                        t.result.trial_index.to_string(),
                        role.to_string(),
                        p.x.to_string(),
                        p.y.to_string(),
                        u8::from(inf).to_string(),
                    ]
                })
            })
    });
    write_csv(&scatter, &["trial", "role", "x", "y", "infected"], scatter_rows)?;

    let counts = dir.join(COUNTS_FILE);
    write_csv(
        &counts,
        &["trial", "count_all", "count_smart", "pct_change"],
        trials.iter().map(|t| {
            let r = &t.result;
            vec![
                r.trial_index.to_string(),
                r.count_all.to_string(),
                r.count_smart.to_string(),
                r.pct_change.to_string(),
            ]
        }),
    )?;

    let covariance = dir.join(COVARIANCE_FILE);
    write_csv(
        &covariance,
        &["trial", "cov_smart", "cov_all"],
        trials.iter().map(|t| {
            let r = &t.result;
            vec![r.trial_index.to_string(), opt(r.cov_smart), opt(r.cov_all)]
        }),
    )?;

    let scenario = dir.join(SCENARIO_FILE);
    write_csv(
        &scenario,
        &[
            "country",
            "mean_count_all",
            "mean_count_smart",
            "mean_pct_change",
            "undefined_trials",
            "pct_change_of_means",
        ],
        results.scenarios.iter().map(|s| {
            vec![
                s.name.clone(),
                s.mean_count_all.to_string(),
                s.mean_count_smart.to_string(),
                opt(s.mean_pct_change),
                s.undefined_trials.to_string(),
                opt(s.pct_change_of_means),
            ]
        }),
    )?;

    Ok(vec![scatter, counts, covariance, scenario])
}
