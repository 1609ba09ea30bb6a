use mces_core::cropfield::{CropConfig, CropTeam, LearnerKind};
use mces_core::domains::{make_tiger_competitive, tiger_opponent_policies};
use mces_core::mcesp::{Event, McespLearner, PruningSettings, SearchConfig};
use mces_core::oracle::exact_policy_value;
use mces_core::pruning::{Estimator, PruneConfig, PruneOrder, RegretLedger};
use mces_core::qtable::Entry;
use mces_core::{OpponentExecutor, ReactivePolicy, SequenceTree, Simulator};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_run(seed: u64) -> mces_core::mcesp::RunResult {
    let d = make_tiger_competitive();
    let sim = Simulator::new(&d).unwrap();
    let opp = OpponentExecutor::uniform(tiger_opponent_policies()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ReactivePolicy::random(*sim.tree(0), 3, &mut rng);
    let mut cfg = SearchConfig::new(0.2, 0.1);
    cfg.k_cap = Some(300);
    cfg.max_stages = 60;
    cfg.pruning = Some(PruningSettings { phi: 0.15, order: PruneOrder::Greedy, min_probability: 0.0, warmup: None, estimator: Default::default() });
    McespLearner::new(&sim, &opp, init, cfg).unwrap().run(&mut rng).unwrap()
}

#[test]
fn run_is_replayable_and_consistent() {
    let a = small_run(21);
    let b = small_run(21);
    // the closing record carries NaN for the missing candidate
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let path = a.policy_path();
    assert_eq!(path.len() as u64, a.transforms + 1);
    for w in path.windows(2) {
        assert_eq!(w[0].diff_count(&w[1]), 1);
    }
    assert_eq!(path.last().unwrap(), &a.policy);
    assert!(a.k_capped);
    let staged: u64 = a.records.iter().map(|r| r.samples).sum();
    assert_eq!(staged, a.total_samples);
    assert!(a.total_trajectories >= a.total_samples / 3);
}

#[test]
fn capped_runs_mostly_climb() {
    let d = make_tiger_competitive();
    let opp = OpponentExecutor::uniform(tiger_opponent_policies()).unwrap();
    let (mut up, mut all) = (0, 0);
    for seed in 0..3 {
        let r = small_run(seed);
        let values: Vec<f64> =
            r.policy_path().iter().map(|p| exact_policy_value(&d, p.view(), &opp).unwrap().value).collect();
        for w in values.windows(2) {
            all += 1;
            if w[1] > w[0] {
                up += 1;
            }
        }
        assert!(values.last().unwrap() >= values.first().unwrap());
        assert!(matches!(r.event, Event::Converged | Event::StageLimit | Event::Abandoned));
    }
    assert!(all > 0);
    assert!(up as f64 >= 0.8 * all as f64, "{up}/{all}");
}

#[test]
fn crop_reports_add_up() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = CropConfig::new(3, LearnerKind::Addf { k: 100, epsilon: 0.2, delta: 0.1 });
    let days = cfg.days as u64;
    let mut team = CropTeam::new(cfg, &mut rng).unwrap();
    let r = team.run(5, &mut rng).unwrap();
    assert_eq!(r.seasons, 5);
    assert!(r.slow_active_days <= 5 * days);
    assert_eq!(r.slow.total(), r.slow_active_days);
    assert!(r.fast.total() > 0);
    assert!(r.calls <= r.fast.total());
}

proptest! {
    #[test]
    fn running_average_matches_mean(xs in proptest::collection::vec(-100.0f64..100.0, 1..200)) {
        let mut e = Entry::<f64>::default();
        for &x in &xs {
            e.update(x).unwrap();
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert_eq!(e.count, xs.len() as u64);
        prop_assert!((e.q - mean).abs() < 1e-9);
    }

    #[test]
    fn ledger_respects_budget(
        phi in 0.0f64..0.5,
        warmup in 0u64..50,
        paths in proptest::collection::vec((0u16..6, 0u16..6), 1..200),
        probes in proptest::collection::vec(0u32..43, 0..80),
        greedy in any::<bool>(),
    ) {
        let tree = SequenceTree::new(6, 3).unwrap();
        let order = if greedy { PruneOrder::Greedy } else { PruneOrder::Random };
        let mut l = RegretLedger::new(tree, PruneConfig { phi, warmup, order, min_probability: 0.0, estimator: Estimator::Trajectory });
        for &(a, b) in &paths {
            let h1 = tree.child_at(tree.root(), 0, a);
            let h2 = tree.child_at(h1, 1, b);
            l.record(&[tree.root(), h1, h2]);
        }
        let warm = l.warmed_up();
        if greedy {
            l.prune_greedy();
        } else {
            for &s in &probes {
                l.scheduler_filter(s);
            }
        }
        if !warm {
            prop_assert_eq!(l.pruned_count(), 0);
        }
        prop_assert!(l.cumulative_regret() <= phi + 1e-12);
        prop_assert_eq!(l.pruned_count() + l.unpruned_count(), 43);
        // the root is always reached, so its share is (T − 0)/T = 1
        prop_assert!(!l.is_pruned(tree.root()) || phi >= 1.0);
    }
}
