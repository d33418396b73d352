use std::fs;
use std::path::{Path, PathBuf};

use celltrace_core::ppp::{
    emit_results, run_trials, run_trials_detailed, summarize, CountryScenario, ExperimentResults, SimConfig,
    REGION_RADIUS,
};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::{positive_f64, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Country {
    Bd,
    In,
    Kr,
}

impl Country {
    fn scenario(self) -> CountryScenario {
        match self {
            Country::Bd => CountryScenario::bangladesh(),
            Country::In => CountryScenario::india(),
            Country::Kr => CountryScenario::south_korea(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Any-phone density (points per disk).
    #[arg(long)]
    density_all: Option<f64>,
    /// Smartphone-only density (points per disk).
    #[arg(long)]
    density_smart: Option<f64>,
    /// Fraction of points marked positive.
    #[arg(long)]
    infection_rate: Option<f64>,
    /// Contact radius in scaled units (1.0 = 100 m).
    #[arg(long, default_value_t = 0.03, value_parser = positive_f64)]
    radius: f64,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Load a country's constants; explicit density/rate flags override them.
    #[arg(long, value_enum)]
    country: Option<Country>,
    /// Run bd, in and kr with the same radius, trials and seed and write
    /// only the scenario comparison.
    #[arg(long, conflicts_with_all = ["country", "density_all", "density_smart", "infection_rate"])]
    compare_countries: bool,
    /// Re-run exactly the experiment recorded in a manifest.
    #[arg(long, conflicts_with_all = ["country", "density_all", "density_smart", "infection_rate", "compare_countries"])]
    from_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub name: String,
    pub config: SimConfig,
}

/// Everything needed to reproduce a simulate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub scenarios: Vec<NamedConfig>,
    /// Per-trial files (scatter, counts, covariance) were written.
    pub per_trial: bool,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
}

fn plan_from_flags(a: &SimulateArgs) -> Result<(Vec<NamedConfig>, bool), CliError> {
    let named = |s: CountryScenario| NamedConfig {
        config: SimConfig::for_scenario(&s, a.radius, a.trials, a.seed),
        name: s.name,
    };
    if a.compare_countries {
        return Ok((CountryScenario::presets().into_iter().map(named).collect(), false));
    }
    let base = a.country.map(Country::scenario);
    let pick = |flag: Option<f64>, preset: Option<f64>, name: &str| {
        flag.or(preset)
            .ok_or_else(|| CliError::Usage(format!("--{name} is required unless --country is given")))
    };
    let name = base.as_ref().map_or("custom".to_string(), |b| b.name.clone());
    let scenario = CountryScenario::new(
        &name,
        pick(a.density_all, base.as_ref().map(|b| b.density_all), "density-all")?,
        pick(a.density_smart, base.as_ref().map(|b| b.density_smart), "density-smart")?,
        pick(
            a.infection_rate,
            base.as_ref().map(|b| b.infection_rate),
            "infection-rate",
        )?,
    );
    let nc = named(scenario);
    nc.config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((vec![nc], true))
}

fn execute(scenarios: &[NamedConfig], per_trial: bool, seed: u64, out: &Path) -> Result<RunManifest, CliError> {
    for s in scenarios {
        if s.config.region_radius != REGION_RADIUS {
            return Err(CliError::Failed(format!(
                "scenario {}: only region radius {REGION_RADIUS} is supported",
                s.name
            )));
        }
    }
    let mut results = ExperimentResults::default();
    for s in scenarios {
        if per_trial {
            let detailed = run_trials_detailed(&s.config)?;
            let plain: Vec<_> = detailed.iter().map(|d| d.result.clone()).collect();
            results.scenarios.push(summarize(&s.name, &plain));
            results.trials.extend(detailed);
        } else {
            results.scenarios.push(summarize(&s.name, &run_trials(&s.config)?));
        }
    }
    let mut written = emit_results(&results, out)?;
    if !per_trial {
        // only the scenario table carries data in comparison mode
        for p in std::mem::take(&mut written) {
            if p.file_name().and_then(|n| n.to_str()) == Some(celltrace_core::ppp::SCENARIO_FILE) {
                written.push(p);
            } else {
                fs::remove_file(&p).map_err(CliError::io(&p))?;
            }
        }
    }
    for s in &results.scenarios {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.2}%"));
        println!(
            "{}: mean count all {:.4}, smart {:.4}; change of means {}; mean per-trial change {} ({} undefined)",
            s.name,
            s.mean_count_all,
            s.mean_count_smart,
            fmt(s.pct_change_of_means),
            fmt(s.mean_pct_change),
            s.undefined_trials
        );
    }
    let outputs = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    Ok(RunManifest {
        tool: "celltrace".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        seed,
        scenarios: scenarios.to_vec(),
        per_trial,
        outputs,
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    if m.command != "simulate" || m.scenarios.is_empty() {
        return Err(CliError::Failed(format!("{}: not a simulate manifest", path.display())));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        tracing::warn!(manifest = %m.version, "manifest was written by a different version");
    }
    Ok(m)
}

pub fn run(a: SimulateArgs) -> Result<(), CliError> {
    let (scenarios, per_trial, seed) = match &a.from_manifest {
        Some(path) => {
            let m = read_manifest(path)?;
            for s in &m.scenarios {
                s.config
                    .validate()
                    .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
            }
            (m.scenarios, m.per_trial, m.seed)
        }
        None => {
            if a.trials == 0 {
                return Err(CliError::Usage("--trials must be at least 1".into()));
            }
            let (s, p) = plan_from_flags(&a)?;
            (s, p, a.seed)
        }
    };
    let manifest = execute(&scenarios, per_trial, seed, &a.out)?;
    let path = a.out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(CliError::io(&path))?;
    Ok(())
}
