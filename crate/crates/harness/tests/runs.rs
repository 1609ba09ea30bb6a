use std::fs;

use mces_harness::output::recompute_summary;
use mces_harness::presets;
use mces_harness::{compare, run, ExperimentConfig};

fn quick_tiger() -> ExperimentConfig {
    let mut c = presets::find("tiger-competitive").unwrap();
    c.trials = 5;
    c.seed = 42;
    c.k_cap = Some(60);
    c.max_stages = Some(4);
    c
}

#[test]
fn replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let c = quick_tiger();
    run(&c, &dir.path().join("a")).unwrap();
    let mut c2 = c.clone();
    c2.threads = Some(1);
    run(&c2, &dir.path().join("b")).unwrap();
    for f in ["trials.csv", "metrics.csv", "policies.csv", "pruned.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let header = fs::read_to_string(dir.path().join("a/trials.csv")).unwrap();
    assert!(header.starts_with("trial,stage,seq_id,action,samples,k_m,q_candidate,q_incumbent,oracle_value,event"));
}

#[test]
fn summary_is_recomputable_and_compare_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let c = quick_tiger();
    let s = run(&c, &dir.path().join("a")).unwrap();
    assert!(s.certificate_void);
    assert_eq!(recompute_summary(&dir.path().join("a")).unwrap(), s);
    run(&c, &dir.path().join("b")).unwrap();
    let cmp = compare(&dir.path().join("a"), &dir.path().join("b")).unwrap();
    assert_eq!(cmp.paired_trials, 5);
    assert_eq!(cmp.same_final_policy, Some(1.0));
    for m in cmp.metrics.values() {
        assert_eq!(m.diff.mean, 0.0);
    }
    let mut other = presets::find("cropfield").unwrap();
    other.trials = 1;
    other.domain = mces_harness::DomainChoice::Cropfield { obs_count: 3, seasons: 2, workload: None };
    run(&other, &dir.path().join("c")).unwrap();
    assert!(compare(&dir.path().join("a"), &dir.path().join("c")).is_err());
}

#[test]
fn cropfield_baseline_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = presets::find("cropfield").unwrap();
    c.trials = 3;
    c.seed = 7;
    let s = run(&c, dir.path()).unwrap();
    let acc = s.metrics["overall_accuracy"].mean;
    assert!((acc - 50.0).abs() <= 3.0, "{acc}");
}

#[test]
fn cooperative_tiger_transforms_improve_both() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = presets::find("tiger-cooperative-T3").unwrap();
    c.trials = 10;
    c.seed = 3;
    let s = run(&c, dir.path()).unwrap();
    let m = &s.metrics;
    assert!(m["transforms"].mean >= 1.0);
    assert_eq!(m["converged"].mean, 1.0);
    assert_eq!(m["transforms_improving_all"].mean, m["transforms"].mean);
    assert!(m["final_value"].mean > m["initial_value"].mean);
}

#[test]
fn invalid_config_reports_fields() {
    let err = ExperimentConfig::from_toml("algorithm = \"mcesp\"\nepsilon = -1.0\n[domain]\nname = \"auav\"\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("epsilon"), "{err}");
}
