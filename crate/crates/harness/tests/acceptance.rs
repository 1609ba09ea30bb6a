//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p mces-harness --test acceptance` runs everything (about
//! 40 minutes on one core). Numeric arguments pick a subset:
//! `cargo test -p mces-harness --test acceptance -- 1 2 3`.
//!
//! Verdicts are printed, not asserted: a FAIL line does not fail the build.
//! The binary exits non-zero only when a criterion cannot be evaluated.

use std::collections::BTreeSet;
use std::time::Instant;

use anyhow::{Context, Result};
use mces_core::domains::{make_auav, make_money_laundering, make_tiger_competitive, make_tiger_cooperative};
use mces_core::mcesmp::joint_histories;
use mces_core::oracle::best_response;
use mces_core::pac::{
    delta_m, epsilon_mcesp, imperfect_monitoring_bounds, k_m_mcesp, lambda_aj, lambda_mcesp, mcesip_bounds,
    mcesmp_bounds, mcesp_bounds, LambdaBound, LambdaKind, RadicalForm, Threshold,
};
use mces_core::policy::neighborhood_formula;
use mces_core::pruning::{Estimator, PruneOrder};
use mces_core::{ActionId, DomainSpec, PacConfig, ReactivePolicy, Simulator};
use mces_harness::runner::opponent_for;
use mces_harness::{run_trials, Algorithm, DomainChoice, ExperimentConfig, OpponentChoice, PruneChoice, TrialOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

const SEED: u64 = 20_240_611;

// criterion 4
const MONO_RUNS: u64 = 200;
const MONO_MIN_IMPROVING: f64 = 0.90;
const MONO_MIN_LOCAL: f64 = 0.90;
// criterion 5
const IP_RUNS: u64 = 50;
const IP_MAX_RATIO: f64 = 0.75;
const IP_MIN_SAME: f64 = 0.60;
const IP_MAX_STAGES: u64 = 40;
// criterion 6
const PRUNE_TARGET: f64 = 26.0;
const PRUNE_TOL: f64 = 4.0;
const PHI: f64 = 0.15;
// criterion 7
const MP_RUNS: u64 = 30;
const MP_K_CAP: u64 = 5_000;
const MP_ALPHA: f64 = 0.05;
const MP_MIN_ALL_IMPROVE: f64 = 0.90;
// criterion 8
const CROP_TRIALS: u64 = 5;
const CROP_SEASONS: u64 = 200;
// criterion 3
const TABLE_RATIO: f64 = 117_590.0 / 265_948.0;
const TABLE_RATIO_TOL: f64 = 0.005;

struct Verdicts {
    lines: Vec<(usize, bool, String)>,
}

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn metric(outs: &[TrialOutput], name: &str) -> Vec<f64> {
    outs.iter().filter_map(|o| o.metrics.get(name).copied()).collect()
}

fn tiger_subject(algorithm: Algorithm, trials: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(DomainChoice::TigerCompetitive, algorithm);
    c.epsilon = 0.2;
    c.delta = 0.1;
    c.pruning = Some(PruneChoice { phi: PHI, order: PruneOrder::Greedy, estimator: Estimator::Trajectory, warmup: None });
    c.opponent = OpponentChoice::Cycle;
    c.trials = trials;
    c.seed = SEED;
    c
}

fn pac_cfg(d: &DomainSpec, epsilon: f64, neighborhood: u64) -> PacConfig {
    let (lo, hi) = d.reward_bounds[0];
    PacConfig {
        epsilon: epsilon * (hi - lo),
        delta: 0.1,
        horizon: d.horizon,
        agent_count: 1,
        neighborhood,
        reward_min: lo,
        reward_max: hi,
    }
}

fn seq_lambda(d: &DomainSpec, seq: &[ActionId]) -> f64 {
    let steps: Vec<(f64, f64)> = seq.iter().map(|&a| d.reward_range_given(0, 1, a)).collect();
    lambda_aj(&steps).value
}

fn all_sequences(actions: usize, len: usize) -> Vec<Vec<ActionId>> {
    (0..actions.pow(len as u32))
        .map(|mut c| {
            (0..len)
                .map(|_| {
                    let a = (c % actions) as ActionId;
                    c /= actions;
                    a
                })
                .collect()
        })
        .collect()
}

fn criterion_1(v: &mut Verdicts) -> Result<()> {
    let obs = |d: &DomainSpec| d.agents[0].alphabet.size() as u64;
    let t = make_tiger_competitive();
    let a = make_auav();
    let m = make_money_laundering();
    let c = make_tiger_cooperative(3);
    let sim = Simulator::new(&c)?;
    let got = [
        neighborhood_formula(3, 2, 3),
        neighborhood_formula(t.action_count(0) as u64, obs(&t), 3),
        neighborhood_formula(a.action_count(0) as u64, obs(&a), 3),
        neighborhood_formula(m.action_count(0) as u64, obs(&m), 3),
        (joint_histories(&sim).len() * c.joint_action_count()) as u64,
    ];
    let want = [20, 128, 470, 636, 189];
    v.record(1, got == want, format!("counts {got:?}, expected {want:?}"));
    Ok(())
}

fn criterion_2(v: &mut Verdicts) -> Result<()> {
    let mut worst = Vec::new();
    let mut ok = true;
    for d in [make_tiger_competitive(), make_auav(), make_money_laundering()] {
        let full = lambda_mcesp(&pac_cfg(&d, 0.1, 1)).value;
        let seqs = all_sequences(d.action_count(1), d.horizon);
        let max = seqs.iter().map(|s| seq_lambda(&d, s)).fold(f64::NEG_INFINITY, f64::max);
        ok &= max <= full;
        worst.push(format!("{} max {max} <= {full} over {} sequences", d.name, seqs.len()));
    }
    v.record(2, ok, worst.join("; "));
    Ok(())
}

fn criterion_3(v: &mut Verdicts) -> Result<()> {
    let d = make_tiger_competitive();
    let cfg = pac_cfg(&d, 0.05, 128);
    let dm = delta_m(cfg.delta, 1)?;
    let full = lambda_mcesp(&cfg);
    let bin = lambda_aj(&[d.reward_range_given(0, 1, 0); 3]);
    let k_full = mcesp_bounds(&cfg, full, dm).k_m;
    let k_bin = mcesip_bounds(bin, &cfg, dm).k_m;
    let ratio = k_bin as f64 / k_full as f64;
    let exact = (bin.value / full.value).powi(2);
    // each ceiling moves its count by less than one
    let rounding = 1.0 / k_full as f64 + exact / k_full as f64;
    let pass = (ratio - exact).abs() <= rounding && (ratio - TABLE_RATIO).abs() <= TABLE_RATIO_TOL;
    v.record(
        3,
        pass,
        format!(
            "k_bin {k_bin} / k_full {k_full} = {ratio:.5}, (Λaj/Λ)² = {exact:.5}, table ratio {TABLE_RATIO:.5} ± {TABLE_RATIO_TOL}"
        ),
    );
    Ok(())
}

fn criterion_4(v: &mut Verdicts, p_runs: &[TrialOutput], secs: f64) {
    let transforms: f64 = metric(p_runs, "transforms").iter().sum();
    let improving: f64 = metric(p_runs, "improving_transforms").iter().sum();
    let frac = improving / transforms;
    let local = mean(&metric(p_runs, "epsilon_local"));
    let pass = p_runs.len() as u64 >= MONO_RUNS && frac >= MONO_MIN_IMPROVING && local >= MONO_MIN_LOCAL;
    v.record(
        4,
        pass,
        format!(
            "{} runs in {secs:.0}s: {improving}/{transforms} transforms improve ({frac:.3} >= {MONO_MIN_IMPROVING}), \
             eps-local share {local:.3} >= {MONO_MIN_LOCAL}",
            p_runs.len()
        ),
    );
}

fn criterion_5(v: &mut Verdicts, p_runs: &[TrialOutput]) -> Result<()> {
    let start = Instant::now();
    let mut cfg = tiger_subject(Algorithm::Mcesip, IP_RUNS);
    cfg.max_stages = Some(IP_MAX_STAGES);
    let ip_runs = run_trials(&cfg)?;
    let paired = &p_runs[..IP_RUNS as usize];
    let ratio = mean(&metric(&ip_runs, "samples_per_transform")) / mean(&metric(paired, "samples_per_transform"));
    let same = ip_runs.iter().zip(paired).filter(|(a, b)| a.policies == b.policies).count() as f64 / IP_RUNS as f64;
    // stage-limited runs cycle on spurious transforms; report the ratio without them too
    let done: Vec<usize> = (0..ip_runs.len()).filter(|&i| ip_runs[i].termination == "converged").collect();
    let pick = |outs: &[TrialOutput]| -> Vec<f64> {
        done.iter().filter_map(|&i| outs[i].metrics.get("samples_per_transform").copied()).collect()
    };
    let ratio_done = mean(&pick(&ip_runs)) / mean(&pick(paired));
    v.record(
        5,
        ratio <= IP_MAX_RATIO && same > IP_MIN_SAME,
        format!(
            "{IP_RUNS} pairs in {:.0}s: samples/transform ratio {ratio:.3} <= {IP_MAX_RATIO} ({ratio_done:.3} over the {} converged pairs, {} hit the {IP_MAX_STAGES}-stage limit), \
             same final policy {same:.2} > {IP_MIN_SAME}",
            start.elapsed().as_secs_f64(),
            done.len(),
            ip_runs.len() - done.len()
        ),
    );
    Ok(())
}

fn parse_table(s: &str) -> Result<Vec<ActionId>> {
    s.chars().map(|c| c.to_digit(10).map(|d| d as ActionId).context("non-digit in policy table")).collect()
}

fn criterion_6(v: &mut Verdicts, p_runs: &[TrialOutput]) -> Result<()> {
    let cfg = tiger_subject(Algorithm::Mcesp, MONO_RUNS);
    let d = make_tiger_competitive();
    let tree = d.tree(0)?;
    let size = mean(&metric(p_runs, "pruned_neighborhood"));
    let bound = PHI * d.horizon as f64 * (d.reward_bounds[0].1 - d.reward_bounds[0].0);
    let mut worst: f64 = 0.0;
    for o in p_runs {
        let opp = opponent_for(&cfg, o.trial)?;
        let table = parse_table(&o.policies[0])?;
        let policy = ReactivePolicy::from_table(tree, d.action_count(0) as u16, table)?;
        let pruned: BTreeSet<_> = o.pruned.iter().flat_map(|r| r.entries.iter().map(|e| e.seq_id)).collect();
        let (_, full) = best_response(&d, &opp, &|_| None)?;
        let (_, restricted) =
            best_response(&d, &opp, &|h| pruned.contains(&h).then(|| policy.table()[h as usize]))?;
        worst = worst.max(full - restricted);
    }
    let pass = (size - PRUNE_TARGET).abs() <= PRUNE_TOL && worst <= bound;
    v.record(
        6,
        pass,
        format!(
            "mean pruned neighborhood {size:.1} (target {PRUNE_TARGET} ± {PRUNE_TOL}); worst value loss {worst:.2} <= {bound}"
        ),
    );
    Ok(())
}

fn criterion_7(v: &mut Verdicts) -> Result<()> {
    let start = Instant::now();
    let mut c = ExperimentConfig::new(DomainChoice::TigerCooperative { horizon: 3 }, Algorithm::Mcesmp);
    c.epsilon = 0.2;
    c.delta = 0.1;
    c.k_cap = Some(MP_K_CAP);
    c.trials = MP_RUNS;
    c.seed = SEED;
    let outs = run_trials(&c)?;
    let v0 = metric(&outs, "initial_value");
    let v1 = metric(&outs, "final_value");
    let diffs: Vec<f64> = v1.iter().zip(&v0).map(|(b, a)| b - a).collect();
    let n = diffs.len() as f64;
    let md = mean(&diffs);
    let sd = (diffs.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = md / (sd / n.sqrt());
    let p = 1.0 - StudentsT::new(0.0, 1.0, n - 1.0)?.cdf(t);
    let transforms: f64 = metric(&outs, "transforms").iter().sum();
    let all: f64 = metric(&outs, "transforms_improving_all").iter().sum();
    let share = all / transforms;
    v.record(
        7,
        p < MP_ALPHA && share >= MP_MIN_ALL_IMPROVE,
        format!(
            "{MP_RUNS} runs in {:.0}s: value {:.3} -> {:.3}, paired t {t:.2}, one-sided p {p:.2e} < {MP_ALPHA}; \
             {all}/{transforms} transforms improve every agent ({share:.3} >= {MP_MIN_ALL_IMPROVE})",
            start.elapsed().as_secs_f64(),
            mean(&v0),
            mean(&v1)
        ),
    );
    Ok(())
}

fn crop_run(algorithm: Algorithm, workload: Option<f64>) -> Result<Vec<TrialOutput>> {
    let mut c = ExperimentConfig::new(DomainChoice::Cropfield { obs_count: 3, seasons: CROP_SEASONS, workload }, algorithm);
    c.trials = CROP_TRIALS;
    c.seed = SEED;
    run_trials(&c)
}

fn criterion_8(v: &mut Verdicts) -> Result<()> {
    let within = |x: f64, t: f64, tol: f64| (x - t).abs() <= tol;
    let base = crop_run(Algorithm::QBaseline, None)?;
    let addf = crop_run(Algorithm::Addf, None)?;
    let base_h = crop_run(Algorithm::QBaseline, Some(5.0))?;
    let addf_h = crop_run(Algorithm::Addf, Some(5.0))?;
    let checks = [
        ("baseline overall", mean(&metric(&base, "overall_accuracy")), 50.0, 3.0),
        ("addf fast", mean(&metric(&addf, "fast_accuracy")), 80.1, 5.0),
        ("addf slow", mean(&metric(&addf, "slow_accuracy")), 83.9, 5.0),
        ("heuristic baseline fast", mean(&metric(&base_h, "fast_accuracy")), 76.0, 5.0),
        ("heuristic addf fast", mean(&metric(&addf_h, "fast_accuracy")), 82.7, 5.0),
    ];
    let active = mean(&metric(&addf_h, "active_days"));
    let mut pass = active >= 85.0;
    let mut parts = Vec::new();
    for (name, x, t, tol) in checks {
        let ok = within(x, t, tol);
        pass &= ok;
        parts.push(format!("{name} {x:.1} ({t} ± {tol}){}", if ok { "" } else { " !" }));
    }
    parts.push(format!("heuristic addf active days {active:.1} (>= 85){}", if active >= 85.0 { "" } else { " !" }));
    v.record(8, pass, format!("{CROP_TRIALS} trials x {CROP_SEASONS} seasons: {}", parts.join(", ")));
    Ok(())
}

fn criterion_9(v: &mut Verdicts) -> Result<()> {
    let mut fails = Vec::new();
    let dm: f64 = delta_m(0.1, 1)?;
    // threshold branches
    let unbounded = [(10, 11), (0, 0), (101, 101)]
        .iter()
        .all(|&(p, q)| epsilon_mcesp(p, q, 100, 2.0, dm, 20, 0.2) == Threshold::Unbounded);
    let half = epsilon_mcesp(100, 100, 100, 2.0, dm, 20, 0.2) == Threshold::Finite(0.1);
    let radical = epsilon_mcesp(40, 40, 100, 2.0, dm, 20, 0.2).value().unwrap_or(f64::NAN);
    let want = 2.0 * ((2.0 * 99.0 * 20.0 / dm).ln() / 80.0).sqrt();
    if !(unbounded && half && (radical - want).abs() < 1e-12) {
        fails.push("single-agent branches");
    }
    let team_cfg = PacConfig {
        epsilon: 0.5,
        delta: 0.1,
        horizon: 3,
        agent_count: 2,
        neighborhood: 10,
        reward_min: 0.0,
        reward_max: 1.0,
    };
    let lam = |x: f64| LambdaBound { value: x, kind: LambdaKind::PolicyPair };
    for form in [RadicalForm::Printed, RadicalForm::Hoeffding] {
        let b = mcesmp_bounds(&team_cfg, lam(1.0), 0.1, form);
        let log = (6.0 * (b.k - 1) as f64).ln() / 4.0 + 10f64.ln() - 0.1f64.ln() / 4.0;
        let want = match form {
            RadicalForm::Printed => (log / 10f64.sqrt()).sqrt(),
            RadicalForm::Hoeffding => (log / 10.0).sqrt(),
        };
        let ok = b.threshold(3, 4, 1.0) == Threshold::Unbounded
            && b.threshold(0, 0, 1.0) == Threshold::Unbounded
            && b.threshold(b.k + 1, b.k + 1, 1.0) == Threshold::Unbounded
            && b.threshold(b.k, b.k, 1.0) == Threshold::Finite(0.25)
            && (b.threshold(5, 5, 1.0).value().unwrap_or(f64::NAN) - want).abs() < 1e-12;
        if !ok {
            fails.push("team branches");
        }
    }
    // series
    let mut sum = 0.0;
    let mut series_ok = true;
    for m in 1..=200_000u64 {
        sum += delta_m(0.1, m)?;
        series_ok &= sum <= 0.1;
    }
    if !(series_ok && sum > 0.1 * (1.0 - 1e-5)) {
        fails.push("delta_m series");
    }
    // perfect monitoring recovery
    let c = PacConfig { epsilon: 0.05, neighborhood: 128, ..team_cfg };
    let l = LambdaBound { value: 660.0, kind: LambdaKind::PerActionSequence };
    let bar = LambdaBound { value: 990.0, kind: LambdaKind::Complement };
    if imperfect_monitoring_bounds(l, bar, 0.0, &c, dm)?.bounds != mcesip_bounds(l, &c, dm) {
        fails.push("delta_e = 0 recovery");
    }
    // Hoeffding coverage
    let single = PacConfig { epsilon: 0.2, neighborhood: 10, agent_count: 1, ..team_cfg };
    let k = k_m_mcesp(&lam(1.0), &single, dm);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let reps = 2000;
    let mut worst_rate: f64 = 0.0;
    for &p in &[0.5, 0.2] {
        let mut misses = 0;
        for _ in 0..reps {
            let s: f64 = (0..k).map(|_| if rng.gen::<f64>() < p { 0.5 } else { -0.5 }).sum();
            if (s / k as f64 - (p - 0.5)).abs() > 0.1 {
                misses += 1;
            }
        }
        worst_rate = worst_rate.max(misses as f64 / reps as f64);
    }
    if worst_rate >= dm {
        fails.push("Hoeffding coverage");
    }
    v.record(
        9,
        fails.is_empty(),
        format!("k_m {k}, worst miss rate {worst_rate:.4} < {dm:.4}; failing: {fails:?}"),
    );
    Ok(())
}

fn main() {
    let picked: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let mut v = Verdicts { lines: Vec::new() };
    let mut errors = Vec::new();
    let mut guard = |n: usize, r: Result<()>| {
        if let Err(e) = r {
            println!("criterion {n}: ERROR {e:#}");
            errors.push(n);
        }
    };
    if want(1) {
        guard(1, criterion_1(&mut v));
    }
    if want(2) {
        guard(2, criterion_2(&mut v));
    }
    if want(3) {
        guard(3, criterion_3(&mut v));
    }
    if want(9) {
        guard(9, criterion_9(&mut v));
    }
    if want(4) || want(5) || want(6) {
        let start = Instant::now();
        match run_trials(&tiger_subject(Algorithm::Mcesp, MONO_RUNS)) {
            Ok(p_runs) => {
                let secs = start.elapsed().as_secs_f64();
                if want(4) {
                    criterion_4(&mut v, &p_runs, secs);
                }
                if want(5) {
                    guard(5, criterion_5(&mut v, &p_runs));
                }
                if want(6) {
                    guard(6, criterion_6(&mut v, &p_runs));
                }
            }
            Err(e) => {
                for n in [4, 5, 6].into_iter().filter(|&n| want(n)) {
                    guard(n, Err(anyhow::anyhow!("subject runs failed: {e:#}")));
                }
            }
        }
    }
    if want(7) {
        guard(7, criterion_7(&mut v));
    }
    if want(8) {
        guard(8, criterion_8(&mut v));
    }
    let passed = v.lines.iter().filter(|l| l.1).count();
    println!("acceptance: {passed}/{} criteria pass", v.lines.len());
    if !errors.is_empty() {
        std::process::exit(1);
    }
}
