//! The message-passing protocol against the centralized join.

use std::collections::{BTreeMap, BTreeSet};

use celltrace_core::opnet::{load_fixture, run_fixture, trace_centrally, Fixture, TraceParams};
use celltrace_core::synth::{random_deployment, Deployment, DeploymentConfig};
use celltrace_core::trace::CoordMode;
use serde_json::Value;

const SEED: u64 = 0x5EED;

fn configs() -> [(DeploymentConfig, TraceParams); 2] {
    let geo = (DeploymentConfig::default(), TraceParams::default());
    let planar = (
        DeploymentConfig {
            mode: CoordMode::Planar,
            operators: 4,
            subscribers: 40,
            extent: 0.25,
            ..DeploymentConfig::default()
        },
        TraceParams {
            distance: 0.02,
            bucket_width: 120,
            threshold: 3,
            ..TraceParams::default()
        },
    );
    [geo, planar]
}

fn fixture(d: &Deployment) -> Fixture {
    Fixture {
        operators: d.operator_nodes(),
        positives: d.positives.clone(),
    }
}

fn positives(d: &Deployment) -> Vec<(celltrace_core::PhoneNumber, i64)> {
    d.positives.iter().map(|p| (p.number.clone(), p.reported_at)).collect()
}

#[test]
fn fifty_random_deployments_match_central() {
    let mut nonempty = 0;
    for i in 0..50u64 {
        let (cfg, params) = &configs()[(i % 2) as usize];
        let d = random_deployment(SEED, i, cfg);
        let run = run_fixture(fixture(&d), *params).unwrap();
        assert!(run.unknown.is_empty());
        let central = trace_centrally(&d.operator_nodes(), &positives(&d), params).unwrap();
        assert_eq!(run.network.suspects(), &central, "deployment {i}");
        if !central.is_empty() {
            nonempty += 1;
        }
    }
    // the generator is tuned so that most deployments have contacts
    assert!(nonempty >= 40, "only {nonempty} deployments produced suspects");
}

#[test]
fn replay_is_byte_identical() {
    for (cfg, params) in configs() {
        let run = || {
            let d = random_deployment(SEED, 7, &cfg);
            let r = run_fixture(fixture(&d), params).unwrap();
            (r.network.suspects().to_csv(), r.network.trace_log().join("\n"))
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn fixture_files_give_same_result() {
    let (cfg, params) = &configs()[0];
    let d = random_deployment(SEED, 3, cfg);
    let dir = tempfile::tempdir().unwrap();
    d.write_fixture(dir.path()).unwrap();
    let from_disk = run_fixture(load_fixture(dir.path()).unwrap(), *params).unwrap();
    let in_memory = run_fixture(fixture(&d), *params).unwrap();
    assert_eq!(
        from_disk.network.suspects().to_csv(),
        in_memory.network.suspects().to_csv()
    );
    assert_eq!(from_disk.network.trace_log(), in_memory.network.trace_log());
}

fn numbers_in(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                match (k.as_str(), x) {
                    ("subscriber" | "number" | "infected_number", Value::String(s)) => {
                        out.insert(s.clone());
                    }
                    _ => numbers_in(x, out),
                }
            }
        }
        Value::Array(a) => a.iter().for_each(|x| numbers_in(x, out)),
        _ => {}
    }
}

/// Operators only ever send data about their own subscribers, plus the
/// number the tracer asked about. Operators receive no subscriber numbers
/// other than the positive being traced.
#[test]
fn trace_log_respects_data_locality() {
    let (cfg, params) = &configs()[0];
    let d = random_deployment(SEED, 11, cfg);
    let owner: BTreeMap<String, String> = d
        .samples
        .iter()
        .flat_map(|(op, s)| s.iter().map(move |x| (x.subscriber.to_string(), op.0.clone())))
        .collect();
    let run = run_fixture(fixture(&d), *params).unwrap();
    assert!(!run.network.trace_log().is_empty());
    let mut zone_responses = 0;
    for line in run.network.trace_log() {
        let rec: Value = serde_json::from_str(line).unwrap();
        let (from, to) = (rec["from"].as_str().unwrap(), rec["to"].as_str().unwrap());
        let msg = &rec["message"];
        let infected = msg["infected_number"].as_str();
        let mut seen = BTreeSet::new();
        numbers_in(msg, &mut seen);
        match msg["kind"].as_str().unwrap() {
            "mobility_request" | "zone_query" => {
                assert_eq!(from, "central");
                let infected = infected.unwrap();
                assert_eq!(seen, BTreeSet::from([infected.to_string()]), "{line}");
                if msg["kind"] == "mobility_request" {
                    assert_eq!(owner.get(infected).map(String::as_str), Some(to));
                }
            }
            "mobility_response" => {
                assert_eq!(to, "central");
                assert!(
                    seen.iter().all(|n| owner.get(n).map(String::as_str) == Some(from)),
                    "{line}"
                );
            }
            "zone_response" => {
                zone_responses += 1;
                assert_eq!(to, "central");
                assert!(
                    seen.iter().all(|n| owner.get(n).map(String::as_str) == Some(from)),
                    "{line}"
                );
            }
            other => panic!("unexpected message kind {other}"),
        }
    }
    assert!(zone_responses > 0);
}
