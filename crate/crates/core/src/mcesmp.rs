//! Centrally controlled exploring-starts search over joint policies.
//!
//! A joint target is one history per agent, all of the same length, together
//! with a joint action. Every agent keeps its own Q table over (joint
//! history, joint action), fed with its own post-history reward, and a joint
//! transform is accepted only when every agent's comparison passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcesp::{lambda_for_depth, Decision, Event, LambdaScope, PruningSettings, RewardScale, SeqState};
use crate::pac::{self, joint_target_count, Bounds, LambdaBound, LambdaKind, PacConfig, RadicalForm};
use crate::policy::{ActionId, PolicyView, ReactivePolicy, SeqId};
use crate::pruning::{PruneOrder, PrunedEntry, RegretLedger};
use crate::qtable::Entry;
use crate::sim::{JointTrajectory, Simulator};

/// Which joint trajectories count as samples of a joint target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Acceptance {
    /// Every agent's target history is realized. Trajectories where only
    /// some components are realized also change under the transform but are
    /// never seen, so accepted transforms can lower the true value and runs
    /// can cycle.
    All,
    /// At least one agent's target history is realized. Outside that event
    /// the two joint policies behave identically, and the event itself is
    /// fixed before the common depth, so the difference of mean post-rewards
    /// is the true value difference divided by its probability.
    #[default]
    Any,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub normalize_rewards: bool,
    pub lambda_scope: LambdaScope,
    pub radical: RadicalForm,
    pub acceptance: Acceptance,
    /// Overrides the constructive joint target count.
    pub neighborhood: Option<u64>,
    pub k_cap: Option<u64>,
    pub rejection_cap: u64,
    pub max_trajectories: u64,
    pub max_stages: u64,
    /// Per-agent ledgers; a joint history with any pruned component is skipped.
    pub pruning: Option<PruningSettings>,
}

impl TeamConfig {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            normalize_rewards: true,
            lambda_scope: LambdaScope::Tail,
            radical: RadicalForm::Printed,
            acceptance: Acceptance::Any,
            neighborhood: None,
            k_cap: None,
            rejection_cap: 1_000_000,
            max_trajectories: 2_000_000_000,
            max_stages: 10_000,
            pruning: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if self.rejection_cap == 0 {
            return Err(Error::Config("rejection_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointStageRecord {
    pub stage: u64,
    pub histories: Vec<SeqId>,
    pub actions: Vec<ActionId>,
    pub samples: u64,
    pub trajectories: u64,
    pub k_m: u64,
    /// Per-agent Q values in raw reward units.
    pub q_candidate: Vec<f64>,
    pub q_incumbent: Vec<f64>,
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRunResult {
    pub initial_policies: Vec<ReactivePolicy>,
    pub policies: Vec<ReactivePolicy>,
    pub records: Vec<JointStageRecord>,
    pub event: Event,
    pub transforms: u64,
    pub total_samples: u64,
    pub total_trajectories: u64,
    /// Pruned histories per agent.
    pub pruned: Vec<Vec<PrunedEntry>>,
    pub k_capped: bool,
}

impl JointRunResult {
    /// Joint policies after each accepted transform, starting with the initial one.
    pub fn policy_path(&self) -> Vec<Vec<ReactivePolicy>> {
        let mut out = vec![self.initial_policies.clone()];
        for r in self.records.iter().filter(|r| r.event == Event::Transform) {
            let mut p = out.last().expect("nonempty").clone();
            for (i, pi) in p.iter_mut().enumerate() {
                pi.set(r.histories[i], r.actions[i]);
            }
            out.push(p);
        }
        out
    }

    pub fn samples_per_transform(&self) -> f64 {
        self.total_samples as f64 / self.transforms.max(1) as f64
    }
}

/// Every joint history of common length, shallowest first.
pub fn joint_histories(sim: &Simulator) -> Vec<Vec<SeqId>> {
    let z = sim.domain().agent_count();
    let mut out = Vec::new();
    for depth in 0..sim.horizon() {
        let mut combos: Vec<Vec<SeqId>> = vec![Vec::new()];
        for i in 0..z {
            let ids = sim.tree(i).ids_at_depth(depth);
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    ids.clone().map(move |h| {
                        let mut c = c.clone();
                        c.push(h);
                        c
                    })
                })
                .collect();
        }
        out.extend(combos);
    }
    out
}

pub struct McesmpLearner<'a> {
    sim: &'a Simulator,
    cfg: TeamConfig,
    scales: Vec<RewardScale>,
    neighborhood: u64,
    joint: Vec<Vec<SeqId>>,
    ja_count: usize,
    initial: Vec<ReactivePolicy>,
    policies: Vec<ReactivePolicy>,
    stage: u64,
    /// Per agent, `joint.len() × ja_count` entries.
    q: Vec<Vec<Entry<f64>>>,
    states: Vec<SeqState>,
    bounds: Vec<Bounds<f64>>,
    ledgers: Option<Vec<RegretLedger>>,
    scratch: JointTrajectory,
    stage_samples: u64,
    stage_trajectories: u64,
    total_samples: u64,
    total_trajectories: u64,
    transforms: u64,
    records: Vec<JointStageRecord>,
    abandoned_any: bool,
}

impl<'a> McesmpLearner<'a> {
    pub fn new(sim: &'a Simulator, initial: Vec<ReactivePolicy>, cfg: TeamConfig) -> Result<Self> {
        cfg.validate()?;
        let d = sim.domain();
        let z = d.agent_count();
        if initial.len() != z {
            return Err(Error::Config("one initial policy per agent required".into()));
        }
        for (i, p) in initial.iter().enumerate() {
            if p.tree() != sim.tree(i) {
                return Err(Error::Config(format!("initial policy {i} does not match its histories")));
            }
        }
        let joint = joint_histories(sim);
        let ja_count = d.joint_action_count();
        let neighborhood = cfg
            .neighborhood
            .unwrap_or_else(|| {
                let acts: Vec<u64> = (0..z).map(|i| d.action_count(i) as u64).collect();
                let obs: Vec<u64> = (0..z).map(|i| sim.tree(i).obs_count() as u64).collect();
                joint_target_count(&acts, &obs, d.horizon as u32)
            })
            .max(1);
        let scales = (0..z).map(|i| RewardScale::new(d.reward_bounds[i], cfg.normalize_rewards)).collect();
        let mut me = Self {
            sim,
            scales,
            neighborhood,
            q: vec![vec![Entry::default(); joint.len() * ja_count]; z],
            states: vec![SeqState::Open; joint.len()],
            joint,
            ja_count,
            bounds: Vec::new(),
            ledgers: None,
            scratch: JointTrajectory::default(),
            stage: 1,
            initial: initial.clone(),
            policies: initial,
            stage_samples: 0,
            stage_trajectories: 0,
            total_samples: 0,
            total_trajectories: 0,
            transforms: 0,
            records: Vec::new(),
            abandoned_any: false,
            cfg,
        };
        me.refresh_bounds()?;
        if let Some(p) = me.cfg.pruning.clone() {
            let warmup = p.warmup.unwrap_or(me.bounds[0].k / 2);
            me.ledgers = Some(
                (0..z)
                    .map(|i| {
                        RegretLedger::new(
                            *sim.tree(i),
                            p.ledger_config(warmup),
                        )
                    })
                    .collect(),
            );
        }
        Ok(me)
    }

    fn unit_range(&self) -> f64 {
        // team rewards share one range; per-agent streams use the widest
        self.scales.iter().map(|s| s.unit_range()).fold(0.0, f64::max)
    }

    fn refresh_bounds(&mut self) -> Result<()> {
        let d = self.sim.domain();
        let (lo, hi) = if self.cfg.normalize_rewards { (0.0, 1.0) } else { d.reward_bounds[0] };
        let cfg = PacConfig {
            epsilon: self.cfg.epsilon,
            delta: self.cfg.delta,
            horizon: d.horizon,
            agent_count: d.agent_count(),
            neighborhood: self.neighborhood,
            reward_min: lo,
            reward_max: hi,
        };
        let dm = pac::delta_m(self.cfg.delta, self.stage)?;
        let unit = self.unit_range();
        self.bounds = (0..d.horizon)
            .map(|depth| {
                let lambda = LambdaBound {
                    value: lambda_for_depth(self.cfg.lambda_scope, d.horizon, depth, unit),
                    kind: LambdaKind::PolicyPair,
                };
                pac::mcesmp_bounds(&cfg, lambda, dm, self.cfg.radical).with_cap(self.cfg.k_cap)
            })
            .collect();
        Ok(())
    }

    pub fn policies(&self) -> &[ReactivePolicy] {
        &self.policies
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn neighborhood(&self) -> u64 {
        self.neighborhood
    }

    pub fn joint_histories(&self) -> &[Vec<SeqId>] {
        &self.joint
    }

    pub fn bounds(&self, depth: usize) -> &Bounds<f64> {
        &self.bounds[depth]
    }

    pub fn ledgers(&self) -> Option<&[RegretLedger]> {
        self.ledgers.as_deref()
    }

    /// Agent `agent`'s entry for joint history index `j` and joint action `ja`.
    pub fn entry(&self, agent: usize, j: usize, ja: usize) -> Entry<f64> {
        self.q[agent][j * self.ja_count + ja]
    }

    fn depth(&self, j: usize) -> usize {
        self.sim.tree(0).depth(self.joint[j][0])
    }

    fn incumbent(&self, j: usize) -> usize {
        let acts: Vec<ActionId> = self.policies.iter().zip(&self.joint[j]).map(|(p, &h)| p.action(h)).collect();
        self.sim.domain().joint_index(&acts)
    }

    fn pruned(&self, j: usize) -> bool {
        self.ledgers
            .as_ref()
            .is_some_and(|ls| ls.iter().zip(&self.joint[j]).any(|(l, &h)| l.is_pruned(h)))
    }

    fn open(&mut self) -> Vec<usize> {
        if let Some(ls) = self.ledgers.as_mut() {
            for l in ls.iter_mut().filter(|l| l.config().order == PruneOrder::Greedy) {
                l.prune_greedy();
            }
        }
        (0..self.joint.len()).filter(|&j| self.states[j] == SeqState::Open && !self.pruned(j)).collect()
    }

    fn filter(&mut self, j: usize) -> bool {
        if let Some(ls) = self.ledgers.as_mut() {
            let mut pass = true;
            for (l, &h) in ls.iter_mut().zip(&self.joint[j]) {
                pass &= l.scheduler_filter(h);
            }
            pass
        } else {
            true
        }
    }

    /// Sample until the joint target is accepted under the configured rule.
    fn sample_target(&mut self, j: usize, ja: usize, rng: &mut impl Rng) -> bool {
        let z = self.policies.len();
        let acts = self.sim.domain().joint_actions(ja);
        let hist = self.joint[j].clone();
        let depth = self.depth(j);
        let require_all = self.cfg.acceptance == Acceptance::All;
        let targets: Vec<Option<SeqId>> = hist.iter().map(|&h| Some(h)).collect();
        for _ in 0..self.cfg.rejection_cap {
            let views: Vec<PolicyView<'_>> =
                (0..z).map(|i| self.policies[i].view_with(hist[i], acts[i])).collect();
            self.stage_trajectories += 1;
            let hit = match self.ledgers.as_mut() {
                Some(ls) => {
                    self.sim.sample(&views, rng, &mut self.scratch);
                    for (l, t) in ls.iter_mut().zip(&self.scratch.agents) {
                        l.record(&t.histories);
                    }
                    let got = (0..z).map(|i| self.scratch.agents[i].histories[depth] == hist[i]);
                    if require_all {
                        got.fold(true, |a, b| a && b)
                    } else {
                        got.fold(false, |a, b| a || b)
                    }
                }
                None => {
                    let alive = self.sim.sample_targeted(&views, &targets, require_all, rng, &mut self.scratch);
                    if require_all {
                        alive.iter().all(|&a| a)
                    } else {
                        alive.iter().any(|&a| a)
                    }
                }
            };
            if hit {
                return true;
            }
        }
        false
    }

    /// Draw an open joint history and sweep every joint action at it.
    pub fn sample_step(&mut self, rng: &mut impl Rng) -> Result<Option<usize>> {
        let j = loop {
            let open = self.open();
            if open.is_empty() {
                return Ok(None);
            }
            let j = open[rng.gen_range(0..open.len())];
            if self.filter(j) {
                break j;
            }
        };
        let depth = self.depth(j);
        let z = self.policies.len();
        let mut rewards = Vec::with_capacity(self.ja_count);
        for ja in 0..self.ja_count {
            if !self.sample_target(j, ja, rng) {
                log::warn!("joint history {j} missed {} times; set aside", self.cfg.rejection_cap);
                self.states[j] = SeqState::Abandoned;
                self.abandoned_any = true;
                self.flush();
                return Ok(Some(j));
            }
            let r: Vec<f64> = (0..z).map(|i| self.scales[i].post(&self.scratch.agents[i], depth)).collect();
            rewards.push(r);
        }
        for (ja, r) in rewards.into_iter().enumerate() {
            for (i, &ri) in r.iter().enumerate() {
                self.q[i][j * self.ja_count + ja].update(ri)?;
            }
        }
        self.stage_samples += self.ja_count as u64;
        self.flush();
        Ok(Some(j))
    }

    fn flush(&mut self) {
        self.total_trajectories += self.stage_trajectories;
        self.stage_trajectories = 0;
    }

    /// Conjunctive test at one joint history. Among joint actions that beat
    /// the incumbent for every agent, the one with the largest smallest gain
    /// wins.
    pub fn transform_test(&mut self, j: usize) -> (Decision, Option<usize>) {
        if self.states[j] != SeqState::Open {
            return (self.terminal_or_continue(), None);
        }
        let b = self.bounds[self.depth(j)];
        let inc = self.incumbent(j);
        let z = self.policies.len();
        let mut best: Option<(usize, f64)> = None;
        for ja in 0..self.ja_count {
            if ja == inc {
                continue;
            }
            let mut worst = f64::INFINITY;
            let mut all = true;
            for i in 0..z {
                let (c, q) = (self.entry(i, j, ja), self.entry(i, j, inc));
                let diff = c.q - q.q;
                if !b.threshold(c.count, q.count, b.lambda.value).exceeded_by(diff) {
                    all = false;
                    break;
                }
                worst = worst.min(diff);
            }
            if all && best.is_none_or(|(_, w)| worst > w) {
                best = Some((ja, worst));
            }
        }
        if let Some((ja, _)) = best {
            let seq = self.joint[j][0];
            let action = self.sim.domain().joint_actions(ja)[0];
            return (Decision::Transform { seq, action }, Some(ja));
        }
        if self.entry(0, j, inc).count >= b.k {
            self.states[j] = SeqState::Certified;
        }
        (self.terminal_or_continue(), None)
    }

    fn terminal_or_continue(&mut self) -> Decision {
        if self.open().is_empty() {
            Decision::Terminate
        } else {
            Decision::Continue
        }
    }

    fn stage_trajectories_total(&self) -> u64 {
        self.total_trajectories - self.records.iter().map(|r| r.trajectories).sum::<u64>()
    }

    fn to_raw(&self, j: usize, ja: usize) -> Vec<f64> {
        let steps = self.sim.horizon() - self.depth(j);
        (0..self.policies.len()).map(|i| self.scales[i].to_raw(self.entry(i, j, ja).q, steps)).collect()
    }

    fn apply(&mut self, j: usize, ja: usize) -> Result<()> {
        let inc = self.incumbent(j);
        let acts = self.sim.domain().joint_actions(ja);
        self.records.push(JointStageRecord {
            stage: self.stage,
            histories: self.joint[j].clone(),
            actions: acts.clone(),
            samples: self.stage_samples,
            trajectories: self.stage_trajectories_total(),
            k_m: self.bounds[self.depth(j)].k,
            q_candidate: self.to_raw(j, ja),
            q_incumbent: self.to_raw(j, inc),
            event: Event::Transform,
        });
        for (i, p) in self.policies.iter_mut().enumerate() {
            p.set(self.joint[j][i], acts[i]);
        }
        self.transforms += 1;
        self.stage += 1;
        self.total_samples += self.stage_samples;
        self.stage_samples = 0;
        self.q.iter_mut().for_each(|t| t.iter_mut().for_each(|e| *e = Entry::default()));
        self.states.iter_mut().for_each(|s| *s = SeqState::Open);
        self.refresh_bounds()
    }

    pub fn step(&mut self, rng: &mut impl Rng) -> Result<Decision> {
        let Some(j) = self.sample_step(rng)? else {
            return Ok(Decision::Terminate);
        };
        let (d, ja) = self.transform_test(j);
        if let Some(ja) = ja {
            self.apply(j, ja)?;
        }
        Ok(d)
    }

    pub fn run(mut self, rng: &mut impl Rng) -> Result<JointRunResult> {
        let event = loop {
            if self.total_trajectories >= self.cfg.max_trajectories {
                break Event::BudgetExhausted;
            }
            if self.stage > self.cfg.max_stages {
                break Event::StageLimit;
            }
            if self.step(rng)? == Decision::Terminate {
                break if self.abandoned_any { Event::Abandoned } else { Event::Converged };
            }
        };
        let inc = self.incumbent(0);
        self.records.push(JointStageRecord {
            stage: self.stage,
            histories: self.joint[0].clone(),
            actions: self.sim.domain().joint_actions(inc),
            samples: self.stage_samples,
            trajectories: self.stage_trajectories_total(),
            k_m: self.bounds[0].k,
            q_candidate: vec![f64::NAN; self.policies.len()],
            q_incumbent: self.to_raw(0, inc),
            event,
        });
        self.total_samples += self.stage_samples;
        Ok(JointRunResult {
            k_capped: self.bounds.iter().any(|b| b.capped()),
            pruned: self.ledgers.as_ref().map(|ls| ls.iter().map(|l| l.snapshot()).collect()).unwrap_or_default(),
            initial_policies: self.initial,
            policies: self.policies,
            records: self.records,
            event,
            transforms: self.transforms,
            total_samples: self.total_samples,
            total_trajectories: self.total_trajectories,
        })
    }
}
