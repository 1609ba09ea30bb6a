//! Two-layer crop-field toy with game-delayed rewards.
//!
//! A fast agent images all sectors every few days and raises calls to
//! action; a slow agent visits one called sector per day. An oracle reveals
//! the sector's true stress whenever the slow agent acts, and that reveal is
//! the only reward either agent ever sees. A fast-agent game therefore stays
//! open until its call reaches the front of the slow agent's queue, while
//! new fast games keep starting.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pac::{self, epsilon_mcesp};
use crate::qtable::Entry;

pub const REJECT: usize = 0;
pub const ACCEPT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerKind {
    /// Greedy tabular Q-learning; ties go to reject. `alpha: None` uses the
    /// sample-average step `1/(n+1)`.
    QBaseline { alpha: Option<f64> },
    /// Exploring-starts search with paired counts and a fixed sample bound `k`.
    Addf { k: u64, epsilon: f64, delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub sectors: usize,
    pub days: u32,
    /// The fast agent acts on day 1 and every `fast_period` days after.
    pub fast_period: u32,
    pub obs_count: usize,
    pub fast_accuracy: f64,
    pub slow_accuracy: f64,
    pub flip_start: f64,
    pub flip_decay: f64,
    /// Workload steepness `m`; `None` turns the heuristic off.
    pub workload: Option<f64>,
    pub learner: LearnerKind,
}

impl CropConfig {
    pub fn new(obs_count: usize, learner: LearnerKind) -> Self {
        Self {
            sectors: 5,
            days: 89,
            fast_period: 3,
            obs_count,
            fast_accuracy: 0.7,
            slow_accuracy: 0.85,
            flip_start: 0.5,
            flip_decay: 0.35,
            workload: None,
            learner,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=5).contains(&self.obs_count) || self.obs_count == 4 {
            return Err(Error::Config(format!("observation count must be 3 or 5, got {}", self.obs_count)));
        }
        if self.sectors == 0 || self.days == 0 || self.fast_period == 0 {
            return Err(Error::Config("sectors, days and fast_period must be positive".into()));
        }
        for p in [self.fast_accuracy, self.slow_accuracy, self.flip_start] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if let Some(m) = self.workload {
            if !(m > 0.0) {
                return Err(Error::Config("workload m must be positive".into()));
            }
        }
        match self.learner {
            LearnerKind::QBaseline { alpha: Some(alpha) } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(Error::Config("alpha must lie in (0, 1]".into()))
            }
            LearnerKind::Addf { k, epsilon, delta } if k < 2 || !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) => {
                Err(Error::Config("ADDF needs k ≥ 2, ε > 0 and δ in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Chance that a sector's stress flips on `day` (1-based).
pub fn flip_probability(start: f64, decay: f64, day: u32) -> f64 {
    start * (-decay * (day as f64 - 1.0)).exp()
}

/// Observation distribution given the true stress. The fully correlated
/// symbol (0 when clean, `n−1` when stressed) gets `accuracy`; the rest is
/// spread over the other symbols with weight halving per step away from it.
pub fn observation_distribution(n: usize, accuracy: f64, stressed: bool) -> Vec<f64> {
    let correct = if stressed { n - 1 } else { 0 };
    let weights: Vec<f64> =
        (0..n).map(|o| if o == correct { 0.0 } else { 0.5f64.powi(o.abs_diff(correct) as i32) }).collect();
    let total: f64 = weights.iter().sum();
    weights
        .into_iter()
        .enumerate()
        .map(|(o, w)| if o == correct { accuracy } else { (1.0 - accuracy) * w / total })
        .collect()
}

/// Probability that the `i`th rejected sector (1-based) is forwarded anyway
/// when `called` sectors were already called.
pub fn workload_weight(m: f64, called: usize, i: usize) -> f64 {
    m / (m + called as f64 + i as f64)
}

/// Reward for an action once the oracle reveals the stress.
pub fn reward(action: usize, stressed: bool) -> f64 {
    if (action == ACCEPT) == stressed {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, action: usize, stressed: bool) {
        match (action == ACCEPT, stressed) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// One layer's learner over observation symbols and {reject, accept}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum LayerAgent {
    Q { alpha: Option<f64>, q: Vec<[Entry<f64>; 2]> },
    Addf(AddfAgent),
}

impl LayerAgent {
    pub fn new(kind: LearnerKind, obs_count: usize, rng: &mut impl Rng) -> Self {
        match kind {
            LearnerKind::QBaseline { alpha } => LayerAgent::Q { alpha, q: vec![[Entry::default(); 2]; obs_count] },
            LearnerKind::Addf { k, epsilon, delta } => LayerAgent::Addf(AddfAgent::new(obs_count, k, epsilon, delta, rng)),
        }
    }

    /// Exploring-start target for the next batch of decisions.
    pub fn begin_batch(&mut self, rng: &mut impl Rng) -> Option<(usize, usize)> {
        match self {
            LayerAgent::Q { .. } => None,
            LayerAgent::Addf(a) => a.pick_target(rng),
        }
    }

    pub fn act(&self, obs: usize, target: Option<(usize, usize)>) -> usize {
        match self {
            LayerAgent::Q { q, .. } => usize::from(q[obs][ACCEPT].q > q[obs][REJECT].q),
            LayerAgent::Addf(a) => match target {
                Some((o, act)) if o == obs => act,
                _ => a.policy[obs],
            },
        }
    }

    /// The stress behind an observation was revealed; both actions' rewards
    /// are known from it.
    pub fn learn(&mut self, obs: usize, stressed: bool) -> Result<()> {
        match self {
            LayerAgent::Q { alpha, q } => {
                for a in [REJECT, ACCEPT] {
                    let e = &mut q[obs][a];
                    match alpha {
                        Some(step) => {
                            e.q += *step * (reward(a, stressed) - e.q);
                            e.count += 1;
                        }
                        None => e.update(reward(a, stressed))?,
                    }
                }
                Ok(())
            }
            LayerAgent::Addf(a) => a.learn(obs, stressed),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AddfAgent {
    pub policy: Vec<usize>,
    pub entries: Vec<[Entry<f64>; 2]>,
    pub certified: Vec<bool>,
    pub stage: u64,
    pub transforms: u64,
    k: u64,
    epsilon: f64,
    delta: f64,
}

impl AddfAgent {
    /// Range of per-game value differences for rewards in [−1, 1].
    pub const LAMBDA: f64 = 4.0;

    pub fn new(obs_count: usize, k: u64, epsilon: f64, delta: f64, rng: &mut impl Rng) -> Self {
        Self {
            policy: (0..obs_count).map(|_| rng.gen_range(0..2)).collect(),
            entries: vec![[Entry::default(); 2]; obs_count],
            certified: vec![false; obs_count],
            stage: 1,
            transforms: 0,
            k,
            epsilon,
            delta,
        }
    }

    /// Uniform over (observation, action) pairs whose observation is not yet
    /// certified; `None` once every observation is.
    pub fn pick_target(&self, rng: &mut impl Rng) -> Option<(usize, usize)> {
        let open: Vec<usize> = (0..self.policy.len()).filter(|&o| !self.certified[o]).collect();
        let o = *open.choose(rng)?;
        Some((o, rng.gen_range(0..2)))
    }

    pub fn learn(&mut self, obs: usize, stressed: bool) -> Result<()> {
        for a in [REJECT, ACCEPT] {
            self.entries[obs][a].update(reward(a, stressed))?;
        }
        let inc = self.policy[obs];
        let (c, q) = (self.entries[obs][1 - inc], self.entries[obs][inc]);
        let dm = pac::delta_m(self.delta, self.stage)?;
        let n = self.policy.len() as u64;
        let t = epsilon_mcesp(c.count, q.count, self.k, Self::LAMBDA, dm, n, self.epsilon);
        if t.exceeded_by(c.q - q.q) {
            self.policy[obs] = 1 - inc;
            self.stage += 1;
            self.transforms += 1;
            self.entries.iter_mut().for_each(|e| *e = [Entry::default(); 2]);
            self.certified.iter_mut().for_each(|c| *c = false);
        } else if q.count >= self.k {
            self.certified[obs] = true;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Call {
    sector: usize,
    fast_obs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CropReport {
    pub seasons: u64,
    pub fast: Confusion,
    pub slow: Confusion,
    pub calls: u64,
    pub forwarded_rejections: u64,
    pub slow_active_days: u64,
}

impl CropReport {
    pub fn mean_active_days(&self) -> f64 {
        self.slow_active_days as f64 / self.seasons.max(1) as f64
    }

    pub fn calls_per_season(&self) -> f64 {
        self.calls as f64 / self.seasons.max(1) as f64
    }
}

fn draw(dist: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// The two learners, carried from season to season.
pub struct CropTeam {
    cfg: CropConfig,
    pub fast: LayerAgent,
    pub slow: LayerAgent,
    obs: [[Vec<f64>; 2]; 2],
}

impl CropTeam {
    pub fn new(cfg: CropConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.obs_count;
        let table = |acc| [observation_distribution(n, acc, false), observation_distribution(n, acc, true)];
        Ok(Self {
            fast: LayerAgent::new(cfg.learner, n, rng),
            slow: LayerAgent::new(cfg.learner, n, rng),
            obs: [table(cfg.fast_accuracy), table(cfg.slow_accuracy)],
            cfg,
        })
    }

    pub fn config(&self) -> &CropConfig {
        &self.cfg
    }

    /// Play one season, adding its counts to `report`. Calls still queued at
    /// the end of the season are dropped unresolved.
    pub fn season(&mut self, rng: &mut impl Rng, report: &mut CropReport) -> Result<()> {
        let cfg = &self.cfg;
        let mut stress: Vec<bool> = (0..cfg.sectors).map(|_| rng.gen_bool(0.5)).collect();
        let mut queue: VecDeque<Call> = VecDeque::new();
        for day in 1..=cfg.days {
            let p = flip_probability(cfg.flip_start, cfg.flip_decay, day);
            for s in stress.iter_mut() {
                if rng.gen_bool(p) {
                    *s = !*s;
                }
            }
            if (day - 1) % cfg.fast_period == 0 {
                let target = self.fast.begin_batch(rng);
                let mut rejected = Vec::new();
                let mut called = 0;
                for (sector, &st) in stress.iter().enumerate() {
                    let o = draw(&self.obs[0][st as usize], rng);
                    let a = self.fast.act(o, target);
                    report.fast.record(a, st);
                    if a == ACCEPT {
                        queue.push_back(Call { sector, fast_obs: o });
                        called += 1;
                    } else {
                        rejected.push(Call { sector, fast_obs: o });
                    }
                }
                report.calls += called as u64;
                if let Some(m) = cfg.workload {
                    rejected.shuffle(rng);
                    for (i, c) in rejected.into_iter().enumerate() {
                        if rng.gen_bool(workload_weight(m, called, i + 1)) {
                            queue.push_back(c);
                            report.calls += 1;
                            report.forwarded_rejections += 1;
                        }
                    }
                }
            }
            if let Some(call) = queue.pop_front() {
                report.slow_active_days += 1;
                let st = stress[call.sector];
                let target = self.slow.begin_batch(rng);
                let o = draw(&self.obs[1][st as usize], rng);
                let a = self.slow.act(o, target);
                report.slow.record(a, st);
                self.slow.learn(o, st)?;
                self.fast.learn(call.fast_obs, st)?;
            }
        }
        report.seasons += 1;
        Ok(())
    }

    pub fn run(&mut self, seasons: u64, rng: &mut impl Rng) -> Result<CropReport> {
        let mut report = CropReport::default();
        for _ in 0..seasons {
            self.season(rng, &mut report)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slow_clean_distribution() {
        let d = observation_distribution(3, 0.85, false);
        assert_abs_diff_eq!(d[0], 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(d[2], 0.05, epsilon = 1e-12);
        let s = observation_distribution(5, 0.7, true);
        assert_abs_diff_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[4], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(s[3], 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(s[0], 0.02, epsilon = 1e-12);
    }

    #[test]
    fn workload_first_rejection() {
        assert_abs_diff_eq!(workload_weight(5.0, 0, 1), 5.0 / 6.0, epsilon = 1e-12);
        assert!(workload_weight(5.0, 2, 3) < workload_weight(5.0, 2, 2));
    }

    #[test]
    fn flips_settle_within_two_weeks() {
        assert_abs_diff_eq!(flip_probability(0.5, 0.35, 1), 0.5, epsilon = 1e-12);
        assert!(flip_probability(0.5, 0.35, 10) < 0.05);
    }

    #[test]
    fn q_step_one_overwrites() {
        let mut a = LayerAgent::Q { alpha: Some(1.0), q: vec![[Entry::default(); 2]; 3] };
        a.learn(2, true).unwrap();
        match &a {
            LayerAgent::Q { q, .. } => assert_eq!((q[2][0].q, q[2][1].q), (-1.0, 1.0)),
            _ => unreachable!(),
        }
        assert_eq!(a.act(2, None), ACCEPT);
        assert_eq!(a.act(0, None), REJECT);
    }

    #[test]
    fn greedy_baseline_never_calls() {
        let cfg = CropConfig::new(3, LearnerKind::QBaseline { alpha: None });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut team = CropTeam::new(cfg, &mut rng).unwrap();
        let r = team.run(5, &mut rng).unwrap();
        assert_eq!(r.calls, 0);
        assert_eq!(r.fast.total(), 5 * 150);
    }

    #[test]
    fn invalid_symbol_count() {
        let cfg = CropConfig::new(4, LearnerKind::QBaseline { alpha: None });
        assert!(cfg.validate().is_err());
    }
}
