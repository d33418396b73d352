//! Statistical behaviour of the point-process experiment.

use celltrace_core::ppp::{
    emit_results, mark_infected, percentage_change, run_trials, run_trials_detailed, sample_ppp, summarize,
    CountryScenario, ExperimentResults, Population, SimConfig, COUNTS_FILE, SCATTER_FILE,
};
use celltrace_core::seed::{derive_stream, StreamRole};

// Brute-force Monte Carlo means from an independent numpy implementation
// (40,000 trials each, p = 0.18, edge effects included).
const MC_MEAN_ALL_R03: f64 = 1.3013;
const MC_MEAN_SMART_R03: f64 = 0.4436;
const MC_MEAN_ALL_R02: f64 = 0.5840;

fn closed_form(density: f64, rate: f64, r: f64) -> f64 {
    (1.0 - rate) * density * (1.0 - (1.0 - r * r).powf(rate * density))
}

fn bd(radius: f64, trials: usize, seed: u64) -> SimConfig {
    SimConfig::for_scenario(&CountryScenario::bangladesh(), radius, trials, seed)
}

#[test]
fn point_count_is_poisson_mean() {
    let reps = 10_000;
    let total: usize = (0..reps)
        .map(|i| {
            let mut rng = derive_stream(11, i, StreamRole::AnyPhone);
            sample_ppp(100.0, &mut rng).unwrap().len()
        })
        .sum();
    let mean = total as f64 / reps as f64;
    assert!((99.0..=101.0).contains(&mean), "mean point count {mean}");
}

#[test]
fn points_are_uniform_on_the_disk() {
    let mut rng = derive_stream(12, 0, StreamRole::AnyPhone);
    let mut n = 0usize;
    let (mut r2, mut x, mut y) = (0.0, 0.0, 0.0);
    while n < 500_000 {
        for p in sample_ppp(100.0, &mut rng).unwrap() {
            r2 += p.norm_sq();
            x += p.x;
            y += p.y;
            n += 1;
        }
    }
    let n = n as f64;
    // uniform on the unit disk: E[r^2] = 1/2, E[x] = E[y] = 0
    assert!((r2 / n - 0.5).abs() < 0.002, "{}", r2 / n);
    assert!((x / n).abs() < 0.003 && (y / n).abs() < 0.003);
}

#[test]
fn infected_fraction_matches_rate() {
    let (mut infected, mut points) = (0usize, 0usize);
    for i in 0..10_000 {
        let mut rng = derive_stream(13, i, StreamRole::AnyPhone);
        let mut pop = Population::from_points(sample_ppp(100.0, &mut rng).unwrap()).unwrap();
        infected += mark_infected(&mut pop, 0.18, &mut rng).unwrap().len();
        points += pop.len();
    }
    let frac = infected as f64 / points as f64;
    assert!((0.17..=0.19).contains(&frac), "infected fraction {frac}");
}

#[test]
fn closed_form_agrees_with_reference_monte_carlo() {
    // the small-radius approximation ignores the disk edge; at these radii
    // that costs under 2%
    for (density, r, mc) in [
        (100.0, 0.03, MC_MEAN_ALL_R03),
        (58.0, 0.03, MC_MEAN_SMART_R03),
        (100.0, 0.02, MC_MEAN_ALL_R02),
    ] {
        let cf = closed_form(density, 0.18, r);
        assert!((cf - mc).abs() / mc < 0.02, "λ={density} r={r}: {cf} vs {mc}");
    }
}

#[test]
fn simulated_means_match_oracle() {
    let summary = summarize("bd", &run_trials(&bd(0.03, 20_000, 2024)).unwrap());
    let all_err = (summary.mean_count_all - MC_MEAN_ALL_R03).abs() / MC_MEAN_ALL_R03;
    let smart_err = (summary.mean_count_smart - MC_MEAN_SMART_R03).abs() / MC_MEAN_SMART_R03;
    assert!(all_err < 0.04, "{summary:?}");
    assert!(smart_err < 0.06, "{summary:?}");
}

#[test]
fn published_percentage_cells() {
    let cells = [
        ((19, 9), 111.11),
        ((22, 11), 100.0),
        ((19, 6), 216.67),
        ((20, 5), 300.0),
        ((9, 5), 80.0),
        ((10, 4), 150.0),
        ((8, 5), 60.0),
        ((11, 3), 266.67),
    ];
    for ((all, smart), expected) in cells {
        let got = percentage_change(all, smart).value().unwrap();
        assert!((got - expected).abs() < 0.01, "({all},{smart}) -> {got}");
    }
}

#[test]
fn covariance_shrinks_with_density() {
    let results = run_trials(&bd(0.03, 1_000, 5)).unwrap();
    let s = summarize("bd", &results);
    assert!(s.mean_cov_all.unwrap() < s.mean_cov_smart.unwrap(), "{s:?}");
}

#[test]
fn emitted_files_are_reproducible() {
    let config = bd(0.03, 4, 99);
    let write = |dir: &std::path::Path| {
        let trials = run_trials_detailed(&config).unwrap();
        let results: Vec<_> = trials.iter().map(|t| t.result.clone()).collect();
        let scenarios = vec![summarize("bd", &results)];
        emit_results(&ExperimentResults { trials, scenarios }, dir).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files_a = write(a.path());
    let files_b = write(b.path());
    for (fa, fb) in files_a.iter().zip(&files_b) {
        assert_eq!(
            std::fs::read(fa).unwrap(),
            std::fs::read(fb).unwrap(),
            "{}",
            fa.display()
        );
    }
    let counts = std::fs::read_to_string(a.path().join(COUNTS_FILE)).unwrap();
    let lines: Vec<&str> = counts.lines().collect();
    assert_eq!(lines[0], "trial,count_all,count_smart,pct_change");
    assert_eq!(lines.len(), 5);
    let scatter = std::fs::read_to_string(a.path().join(SCATTER_FILE)).unwrap();
    assert_eq!(scatter.lines().next(), Some("trial,role,x,y,infected"));
}
