//! Exploring-starts search that conditions its samples on a predicted
//! opponent action sequence.
//!
//! The subject holds a finite set of candidate opponent policies. After each
//! trajectory it runs a Bayes filter over that set from a uniform prior, using
//! its private signal about the opponent's action, and reads off `â_j`: at
//! every step, the action of the most probable model. Samples at a history
//! `ō` are binned by `â_j`, and each bin is bounded with the `Λ^{a_j}` of its
//! own action sequence, which is never larger than the unconditioned `Λ`.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{DomainSpec, OpponentExecutor};
use crate::error::{Error, Result};
use crate::mcesp::{
    lambda_for_depth, sample_realizing, Decision, Event, LambdaScope, RewardScale, RunResult, SearchConfig,
    SeqState, StageRecord,
};
use crate::pac::{self, Bounds, LambdaBound, LambdaKind, PacConfig};
use crate::policy::{neighborhood_formula, ActionId, ReactivePolicy, SeqId, SequenceTree, Trajectory};
use crate::pruning::{PruneOrder, RegretLedger};
use crate::qtable::Entry;
use crate::sim::{JointTrajectory, Simulator};

/// Posterior weights over the model set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub weights: Vec<f64>,
}

impl Belief {
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "empty model set");
        Self { weights: vec![1.0 / n as f64; n] }
    }

    /// Most probable model, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Candidate opponent policies, indexed over the opponent's own histories.
///
/// The opponent must observe only the shared public signal, so the subject
/// can replay every model's history from its own observations.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    pub policies: Vec<ReactivePolicy>,
    tree: SequenceTree,
    stride: u16,
}

impl ModelSet {
    pub fn new(domain: &DomainSpec, policies: Vec<ReactivePolicy>) -> Result<Self> {
        if domain.agent_count() != 2 {
            return Err(Error::Config("model sets need a two-agent domain".into()));
        }
        if policies.is_empty() {
            return Err(Error::Config("model set is empty".into()));
        }
        let subject = domain.agents[0].alphabet;
        let opp = domain.agents[1].alphabet;
        if !domain.shared_env() || opp.private.is_some() || opp.public != subject.public {
            return Err(Error::Config("opponent histories are not recoverable from the subject's".into()));
        }
        let tree = domain.tree(1)?;
        if policies.iter().any(|p| *p.tree() != tree || p.action_count() as usize != domain.action_count(1)) {
            return Err(Error::Config("model policy does not match the opponent".into()));
        }
        Ok(Self { policies, tree, stride: subject.stride() })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    /// Opponent history ids at each step, replayed from the subject's symbols.
    fn opponent_histories(&self, traj: &Trajectory) -> Vec<SeqId> {
        let steps = traj.actions.len();
        let mut out = Vec::with_capacity(steps);
        let mut h = self.tree.root();
        out.push(h);
        for t in 1..steps {
            let sym = traj.observations[t].expect("observation after the first step");
            h = self.tree.child_at(h, t - 1, sym / self.stride);
            out.push(h);
        }
        out
    }

    fn private_part(&self, sym: u16) -> u16 {
        sym % self.stride
    }
}

/// One Bayes step: each model's weight times the likelihood of the private
/// signal under the joint action it implies. The public growl is common to
/// all models and cancels. All-zero mass falls back to uniform.
pub fn belief_update(
    domain: &DomainSpec,
    models: &ModelSet,
    belief: &Belief,
    opp_history: SeqId,
    action_i: ActionId,
    private_obs: u16,
) -> Belief {
    let weights: Vec<f64> = models
        .policies
        .iter()
        .zip(&belief.weights)
        .map(|(m, &w)| {
            let ja = domain.joint_index(&[action_i, m.action(opp_history)]);
            w * domain.private_likelihood(0, ja, private_obs)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        log::warn!("private signal impossible under every model; belief reset");
        return Belief::uniform(models.len());
    }
    Belief { weights: weights.into_iter().map(|w| w / total).collect() }
}

/// Posterior after each step's private signal, starting from a uniform prior.
pub fn belief_sequence(domain: &DomainSpec, models: &ModelSet, traj: &Trajectory) -> Vec<Belief> {
    let steps = traj.actions.len();
    let hist = models.opponent_histories(traj);
    let mut b = Belief::uniform(models.len());
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let sym = if t + 1 < steps { traj.observations[t + 1] } else { traj.terminal_observation }
            .expect("complete trajectory");
        b = belief_update(domain, models, &b, hist[t], traj.actions[t], models.private_part(sym));
        out.push(b.clone());
    }
    out
}

/// `â_j`: per step, the action the most probable model takes.
pub fn most_probable_action_seq(beliefs: &[Belief], models: &ModelSet, traj: &Trajectory) -> Vec<ActionId> {
    let hist = models.opponent_histories(traj);
    beliefs
        .iter()
        .zip(hist)
        .map(|(b, h)| models.policies[b.argmax()].action(h))
        .collect()
}

/// Per step, the action with the largest posterior mass summed over models.
pub fn marginal_action_seq(beliefs: &[Belief], models: &ModelSet, traj: &Trajectory, actions: usize) -> Vec<ActionId> {
    let hist = models.opponent_histories(traj);
    beliefs
        .iter()
        .zip(hist)
        .map(|(b, h)| {
            let mut mass = vec![0.0; actions];
            for (m, &w) in models.policies.iter().zip(&b.weights) {
                mass[m.action(h) as usize] += w;
            }
            let mut best = 0;
            for (a, &w) in mass.iter().enumerate() {
                if w > mass[best] {
                    best = a;
                }
            }
            best as ActionId
        })
        .collect()
}

/// How `â_j` is read off a belief sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prediction {
    /// Action of the single most probable model.
    #[default]
    ArgmaxModel,
    /// Action with the most posterior mass across models.
    Marginal,
}

pub fn predict_opponent_actions(
    domain: &DomainSpec,
    models: &ModelSet,
    traj: &Trajectory,
    rule: Prediction,
) -> Vec<ActionId> {
    let beliefs = belief_sequence(domain, models, traj);
    match rule {
        Prediction::ArgmaxModel => most_probable_action_seq(&beliefs, models, traj),
        Prediction::Marginal => marginal_action_seq(&beliefs, models, traj, domain.action_count(1)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpConfig {
    pub search: SearchConfig,
    /// Probability that a sample lands in the wrong bin.
    pub delta_e: f64,
    /// Conjunctive reading: a candidate must pass in every bin with samples,
    /// and a history is certified only once every bin it has seen is.
    pub strict: bool,
    #[serde(default)]
    pub prediction: Prediction,
}

impl IpConfig {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self { search: SearchConfig::new(epsilon, delta), delta_e: 0.0, strict: false, prediction: Prediction::ArgmaxModel }
    }
}

/// Samples, values and bounds for one (history, `â_j`) bin.
#[derive(Clone, Debug)]
struct Bin {
    entries: Vec<Entry<f64>>,
    pending: Vec<VecDeque<f64>>,
    bounds: Bounds<f64>,
    certified: bool,
}

impl Bin {
    fn count(&self) -> u64 {
        self.entries[0].count
    }
}

pub struct McesipLearner<'a> {
    sim: &'a Simulator,
    opponent: &'a OpponentExecutor,
    models: ModelSet,
    cfg: IpConfig,
    scale: RewardScale,
    neighborhood: u64,
    /// Per-step `(max, min)` subject reward given each opponent action.
    ranges: Vec<(f64, f64)>,
    initial: ReactivePolicy,
    policy: ReactivePolicy,
    stage: u64,
    delta_m: f64,
    bins: Vec<BTreeMap<Vec<ActionId>, Bin>>,
    states: Vec<SeqState>,
    ledger: Option<RegretLedger>,
    scratch: JointTrajectory,
    stage_samples: u64,
    stage_trajectories: u64,
    total_samples: u64,
    total_trajectories: u64,
    transforms: u64,
    records: Vec<StageRecord>,
    abandoned_any: bool,
    k_capped: bool,
    pending_bin: Option<Vec<ActionId>>,
}

impl<'a> McesipLearner<'a> {
    pub fn new(
        sim: &'a Simulator,
        opponent: &'a OpponentExecutor,
        models: ModelSet,
        initial: ReactivePolicy,
        cfg: IpConfig,
    ) -> Result<Self> {
        cfg.search.validate()?;
        if !(0.0..=1.0).contains(&cfg.delta_e) {
            return Err(Error::Config("delta_e must lie in [0, 1]".into()));
        }
        let domain = sim.domain();
        let tree = *sim.tree(0);
        if *initial.tree() != tree {
            return Err(Error::Config("initial policy does not match the subject's histories".into()));
        }
        let a = domain.action_count(0) as u64;
        let neighborhood = cfg
            .search
            .neighborhood
            .unwrap_or_else(|| neighborhood_formula(a, tree.obs_count() as u64, tree.horizon() as u32))
            .max(1);
        let scale = RewardScale::new(domain.reward_bounds[0], cfg.search.normalize_rewards);
        let ranges = (0..domain.action_count(1) as ActionId).map(|aj| domain.reward_range_given(0, 1, aj)).collect();
        let mut me = Self {
            sim,
            opponent,
            models,
            scale,
            neighborhood,
            ranges,
            bins: vec![BTreeMap::new(); tree.len()],
            states: vec![SeqState::Open; tree.len()],
            ledger: None,
            scratch: JointTrajectory::default(),
            stage: 1,
            delta_m: pac::delta_m(cfg.search.delta, 1)?,
            initial: initial.clone(),
            policy: initial,
            stage_samples: 0,
            stage_trajectories: 0,
            total_samples: 0,
            total_trajectories: 0,
            transforms: 0,
            records: Vec::new(),
            abandoned_any: false,
            k_capped: false,
            pending_bin: None,
            cfg,
        };
        if let Some(p) = me.cfg.search.pruning.clone() {
            // same warmup as the unconditioned learner: half its root bound
            let warmup = p.warmup.unwrap_or_else(|| me.full_bounds(0).k / 2);
            me.ledger = Some(RegretLedger::new(
                tree,
                p.ledger_config(warmup),
            ));
        }
        Ok(me)
    }

    fn pac_config(&self) -> PacConfig<f64> {
        let d = self.sim.domain();
        let (lo, hi) = if self.scale.normalize { (0.0, 1.0) } else { d.reward_bounds[0] };
        PacConfig {
            epsilon: self.cfg.search.epsilon,
            delta: self.cfg.search.delta,
            horizon: d.horizon,
            agent_count: 1,
            neighborhood: self.neighborhood,
            reward_min: lo,
            reward_max: hi,
        }
    }

    fn first_step(&self, depth: usize) -> usize {
        match self.cfg.search.lambda_scope {
            LambdaScope::Tail => depth,
            LambdaScope::Global => 0,
        }
    }

    /// Unconditioned Λ at a depth, in learner units.
    fn full_lambda(&self, depth: usize) -> f64 {
        let h = self.sim.horizon();
        lambda_for_depth(self.cfg.search.lambda_scope, h, depth, self.scale.unit_range())
    }

    fn full_bounds(&self, depth: usize) -> Bounds<f64> {
        let l = LambdaBound { value: self.full_lambda(depth), kind: LambdaKind::PolicyPair };
        pac::mcesp_bounds(&self.pac_config(), l, self.delta_m).with_cap(self.cfg.search.k_cap)
    }

    /// `Λ^{a_j}` of a bin key, in learner units. Keys hold the predicted
    /// opponent actions from the first step the bound covers.
    pub fn lambda_aj(&self, key: &[ActionId]) -> f64 {
        let unit = self.scale.unit_range() / self.scale.range;
        let steps: Vec<(f64, f64)> = key
            .iter()
            .map(|&a| {
                let (hi, lo) = self.ranges[a as usize];
                (hi * unit, lo * unit)
            })
            .collect();
        pac::lambda_aj(&steps).value
    }

    /// `Λ̄`: the largest `Λ^{a_j}` over other keys of the same length.
    fn lambda_bar(&self, key: &[ActionId]) -> f64 {
        let n = self.ranges.len();
        if key.is_empty() || n == 1 {
            return self.lambda_aj(key);
        }
        let mut best = 0.0f64;
        let mut cur = vec![0 as ActionId; key.len()];
        for code in 0..n.pow(key.len() as u32) {
            let mut c = code;
            for slot in cur.iter_mut() {
                *slot = (c % n) as ActionId;
                c /= n;
            }
            if cur[..] != key[..] {
                best = best.max(self.lambda_aj(&cur));
            }
        }
        best
    }

    fn bin_bounds(&self, depth: usize, seq: &[ActionId]) -> Result<Bounds<f64>> {
        let cfg = self.pac_config();
        let own = LambdaBound { value: self.lambda_aj(seq), kind: LambdaKind::PerActionSequence };
        assert!(
            own.value <= self.full_lambda(depth) + 1e-9,
            "bin range {} exceeds the unconditioned range {}",
            own.value,
            self.full_lambda(depth)
        );
        let b = if self.cfg.delta_e > 0.0 {
            let bar = LambdaBound { value: self.lambda_bar(seq), kind: LambdaKind::Complement };
            pac::imperfect_monitoring_bounds(own, bar, self.cfg.delta_e, &cfg, self.delta_m)?.bounds
        } else {
            pac::mcesip_bounds(own, &cfg, self.delta_m)
        };
        Ok(b.with_cap(self.cfg.search.k_cap))
    }

    pub fn policy(&self) -> &ReactivePolicy {
        &self.policy
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn models(&self) -> &ModelSet {
        &self.models
    }

    pub fn ledger(&self) -> Option<&RegretLedger> {
        self.ledger.as_ref()
    }

    /// Bins seen at a history this stage: `(â_j, count, k)`.
    pub fn bins_at(&self, seq: SeqId) -> Vec<(Vec<ActionId>, u64, u64)> {
        self.bins[seq as usize].iter().map(|(k, b)| (k.clone(), b.count(), b.bounds.k)).collect()
    }

    /// Q value and count of one bin entry.
    pub fn bin_entry(&self, seq: SeqId, bin: &[ActionId], action: ActionId) -> Option<Entry<f64>> {
        self.bins[seq as usize].get(bin).map(|b| b.entries[action as usize])
    }

    fn open_seqs(&mut self) -> Vec<SeqId> {
        if let Some(l) = self.ledger.as_mut() {
            if l.config().order == PruneOrder::Greedy {
                l.prune_greedy();
            }
        }
        (0..self.states.len() as SeqId)
            .filter(|&s| self.states[s as usize] == SeqState::Open)
            .filter(|&s| self.ledger.as_ref().is_none_or(|l| !l.is_pruned(s)))
            .collect()
    }

    /// Draw an open history, sweep every action at it and file each sample
    /// under its predicted opponent sequence. Bins advance only once every
    /// action has a waiting sample, keeping counts paired within a bin.
    pub fn sample_step(&mut self, rng: &mut impl Rng) -> Result<Option<SeqId>> {
        let seq = loop {
            let open = self.open_seqs();
            if open.is_empty() {
                return Ok(None);
            }
            let s = open[rng.gen_range(0..open.len())];
            if self.ledger.as_mut().is_none_or(|l| l.scheduler_filter(s)) {
                break s;
            }
        };
        let depth = self.policy.tree().depth(seq);
        let actions = self.policy.action_count() as usize;
        for a in 0..actions {
            let view = self.policy.view_with(seq, a as ActionId);
            let ok = sample_realizing(
                self.sim,
                view,
                self.opponent,
                seq,
                self.cfg.search.rejection_cap,
                rng,
                &mut self.scratch,
                &mut self.ledger,
                &mut self.stage_trajectories,
            );
            if !ok {
                log::warn!("history {seq} missed {} times; set aside", self.cfg.search.rejection_cap);
                self.states[seq as usize] = SeqState::Abandoned;
                self.abandoned_any = true;
                self.flush_trajectories();
                return Ok(Some(seq));
            }
            let traj = &self.scratch.agents[0];
            let r = self.scale.post(traj, depth);
            let mut key = predict_opponent_actions(self.sim.domain(), &self.models, traj, self.cfg.prediction);
            // steps before the bound's window do not affect the bin's range
            key.drain(..self.first_step(depth));
            if !self.bins[seq as usize].contains_key(&key) {
                let bounds = self.bin_bounds(depth, &key)?;
                self.k_capped |= bounds.capped();
                self.bins[seq as usize].insert(
                    key.clone(),
                    Bin {
                        entries: vec![Entry::default(); actions],
                        pending: vec![VecDeque::new(); actions],
                        bounds,
                        certified: false,
                    },
                );
            }
            let bin = self.bins[seq as usize].get_mut(&key).expect("inserted");
            bin.pending[a].push_back(r);
            self.stage_samples += 1;
        }
        for bin in self.bins[seq as usize].values_mut() {
            while bin.pending.iter().all(|q| !q.is_empty()) {
                for (e, q) in bin.entries.iter_mut().zip(bin.pending.iter_mut()) {
                    e.update(q.pop_front().expect("nonempty"))?;
                }
            }
            debug_assert!(bin.entries.iter().all(|e| e.count == bin.entries[0].count));
        }
        self.flush_trajectories();
        Ok(Some(seq))
    }

    fn flush_trajectories(&mut self) {
        self.total_trajectories += self.stage_trajectories;
        self.stage_trajectories = 0;
    }

    /// Count-weighted Q difference over every bin but `skip`, and the pooled count.
    fn pooled_diff(&self, seq: SeqId, skip: &[ActionId], a: ActionId, inc: ActionId) -> Option<(f64, u64)> {
        let mut n = 0u64;
        let mut acc = 0.0;
        for (key, b) in &self.bins[seq as usize] {
            if key[..] == skip[..] || b.count() == 0 {
                continue;
            }
            n += b.count();
            acc += b.count() as f64 * (b.entries[a as usize].q - b.entries[inc as usize].q);
        }
        (n > 0).then(|| (acc / n as f64, n))
    }

    fn passes(&self, seq: SeqId, key: &[ActionId], bin: &Bin, a: ActionId, inc: ActionId) -> Option<f64> {
        let (qa, qi) = (bin.entries[a as usize], bin.entries[inc as usize]);
        let b = &bin.bounds;
        let t = b.threshold(qa.count, qi.count, b.lambda.value);
        let diff = qa.q - qi.q;
        if self.cfg.delta_e > 0.0 {
            let eps = t.value()?;
            if let Some((zeta_bar, n)) = self.pooled_diff(seq, key, a, inc) {
                let bar = LambdaBound { value: self.lambda_bar(key), kind: LambdaKind::Complement };
                let pooled = pac::mcesip_bounds(bar, &self.pac_config(), self.delta_m).with_cap(self.cfg.search.k_cap);
                if let Some(eps_bar) = pooled.threshold(n, n, bar.value).value() {
                    let ib = pac::ImperfectBounds { bounds: *b, delta_e: self.cfg.delta_e };
                    return ib.transform_test(diff, zeta_bar, eps, eps_bar).then_some(diff);
                }
            }
        }
        t.exceeded_by(diff).then_some(diff)
    }

    /// Transform if any bin shows a candidate beating the incumbent by its
    /// own threshold; otherwise mark bins that reached their bound.
    pub fn transform_test(&mut self, seq: SeqId) -> Decision {
        if self.states[seq as usize] != SeqState::Open {
            return self.terminal_or_continue();
        }
        let inc = self.policy.action(seq);
        let mut best: Option<(ActionId, f64, Vec<ActionId>)> = None;
        if self.cfg.strict {
            // the candidate has to pass in every bin holding samples
            for a in (0..self.policy.action_count()).filter(|&a| a != inc) {
                let mut worst: Option<(f64, &Vec<ActionId>)> = None;
                let mut all = true;
                for (key, bin) in self.bins[seq as usize].iter().filter(|(_, b)| b.count() > 0) {
                    match self.passes(seq, key, bin, a, inc) {
                        Some(d) if worst.is_none_or(|(w, _)| d < w) => worst = Some((d, key)),
                        Some(_) => {}
                        None => all = false,
                    }
                }
                if let (true, Some((d, key))) = (all, worst) {
                    if best.as_ref().is_none_or(|(_, b, _)| d > *b) {
                        best = Some((a, d, key.clone()));
                    }
                }
            }
        } else {
            for (key, bin) in &self.bins[seq as usize] {
                for a in 0..self.policy.action_count() {
                    if a == inc {
                        continue;
                    }
                    if let Some(diff) = self.passes(seq, key, bin, a, inc) {
                        if best.as_ref().is_none_or(|(_, d, _)| diff > *d) {
                            best = Some((a, diff, key.clone()));
                        }
                    }
                }
            }
        }
        if let Some((a, _, key)) = best {
            self.pending_bin = Some(key);
            return Decision::Transform { seq, action: a };
        }
        let mut any = false;
        let mut all = true;
        for bin in self.bins[seq as usize].values_mut() {
            if bin.count() >= bin.bounds.k {
                bin.certified = true;
            }
            any |= bin.certified;
            all &= bin.certified;
        }
        let done = if self.cfg.strict { any && all } else { any };
        if done {
            self.states[seq as usize] = SeqState::Certified;
        }
        self.terminal_or_continue()
    }

    fn terminal_or_continue(&mut self) -> Decision {
        if self.open_seqs().is_empty() {
            Decision::Terminate
        } else {
            Decision::Continue
        }
    }

    fn deciding_bin(&self, seq: SeqId) -> Option<(&Vec<ActionId>, &Bin)> {
        self.bins[seq as usize].iter().max_by_key(|(_, b)| b.count())
    }

    fn apply(&mut self, seq: SeqId, action: ActionId, key: Vec<ActionId>) -> Result<()> {
        let depth = self.policy.tree().depth(seq);
        let steps = self.sim.horizon() - depth;
        let inc = self.policy.action(seq);
        let bin = &self.bins[seq as usize][&key];
        self.records.push(StageRecord {
            stage: self.stage,
            seq_id: seq,
            action,
            samples: self.stage_samples,
            trajectories: self.stage_trajectories_total(),
            k_m: bin.bounds.k,
            q_candidate: self.scale.to_raw(bin.entries[action as usize].q, steps),
            q_incumbent: self.scale.to_raw(bin.entries[inc as usize].q, steps),
            event: Event::Transform,
            bin: Some(key),
        });
        self.policy.set(seq, action);
        self.transforms += 1;
        self.stage += 1;
        self.next_stage()
    }

    fn stage_trajectories_total(&self) -> u64 {
        self.total_trajectories - self.records.iter().map(|r| r.trajectories).sum::<u64>()
    }

    fn next_stage(&mut self) -> Result<()> {
        self.total_samples += self.stage_samples;
        self.stage_samples = 0;
        self.bins.iter_mut().for_each(BTreeMap::clear);
        self.states.iter_mut().for_each(|s| *s = SeqState::Open);
        self.delta_m = pac::delta_m(self.cfg.search.delta, self.stage)?;
        Ok(())
    }

    pub fn step(&mut self, rng: &mut impl Rng) -> Result<Decision> {
        let Some(seq) = self.sample_step(rng)? else {
            return Ok(Decision::Terminate);
        };
        let d = self.transform_test(seq);
        if let Decision::Transform { seq, action } = d {
            let key = self.pending_bin.take().expect("set with the decision");
            self.apply(seq, action, key)?;
        }
        Ok(d)
    }

    pub fn run(mut self, rng: &mut impl Rng) -> Result<RunResult> {
        let event = loop {
            if self.total_trajectories >= self.cfg.search.max_trajectories {
                break Event::BudgetExhausted;
            }
            if self.stage > self.cfg.search.max_stages {
                break Event::StageLimit;
            }
            if self.step(rng)? == Decision::Terminate {
                break if self.abandoned_any { Event::Abandoned } else { Event::Converged };
            }
        };
        self.finish(event)
    }

    fn finish(mut self, event: Event) -> Result<RunResult> {
        let root = self.policy.tree().root();
        let inc = self.policy.action(root);
        let steps = self.sim.horizon();
        let (k_m, q_inc, bin) = match self.deciding_bin(root) {
            Some((key, b)) => (b.bounds.k, self.scale.to_raw(b.entries[inc as usize].q, steps), Some(key.clone())),
            None => (self.full_bounds(0).k, f64::NAN, None),
        };
        self.records.push(StageRecord {
            stage: self.stage,
            seq_id: root,
            action: inc,
            samples: self.stage_samples,
            trajectories: self.stage_trajectories_total(),
            k_m,
            q_candidate: f64::NAN,
            q_incumbent: q_inc,
            event,
            bin,
        });
        self.total_samples += self.stage_samples;
        Ok(RunResult {
            k_capped: self.k_capped || self.full_bounds(0).capped(),
            pruned: self.ledger.as_ref().map(|l| l.snapshot()).unwrap_or_default(),
            initial_policy: self.initial,
            policy: self.policy,
            records: self.records,
            event,
            transforms: self.transforms,
            total_samples: self.total_samples,
            total_trajectories: self.total_trajectories,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_tiger_competitive, tiger_opponent_policies};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LISTEN: ActionId = 0;
    const OPEN_LEFT: ActionId = 1;

    fn two_models(d: &DomainSpec) -> ModelSet {
        let ps = tiger_opponent_policies();
        // always listen, always open-left
        ModelSet::new(d, vec![ps[0].clone(), ps[6].clone()]).unwrap()
    }

    #[test]
    fn single_model_keeps_all_mass() {
        let d = make_tiger_competitive();
        let m = ModelSet::new(&d, vec![tiger_opponent_policies()[3].clone()]).unwrap();
        let b = belief_update(&d, &m, &Belief::uniform(1), 0, LISTEN, 2);
        assert_eq!(b.weights, vec![1.0]);
    }

    #[test]
    fn hand_bayes() {
        let mut d = make_tiger_competitive();
        // a binary signal: 0.6 / 0.4 towards the opponent's true action
        let rows = d.private_observation[0].as_mut().unwrap();
        for (ja, row) in rows.iter_mut().enumerate() {
            *row = if ja % 3 == LISTEN as usize { vec![0.6, 0.4, 0.0] } else { vec![0.4, 0.6, 0.0] };
        }
        let m = two_models(&d);
        let b = belief_update(&d, &m, &Belief::uniform(2), 0, LISTEN, 0);
        assert!((b.weights[0] - 0.6).abs() < 1e-12 && (b.weights[1] - 0.4).abs() < 1e-12);
        // tiger's own 0.6 / 0.2 / 0.2 signal gives 3 : 1
        let d = make_tiger_competitive();
        let b = belief_update(&d, &two_models(&d), &Belief::uniform(2), 0, LISTEN, 0);
        assert!((b.weights[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn flat_signal_leaves_prior() {
        let mut d = make_tiger_competitive();
        for row in d.private_observation[0].as_mut().unwrap() {
            *row = vec![1.0 / 3.0; 3];
        }
        let prior = Belief { weights: vec![0.3, 0.7] };
        let b = belief_update(&d, &two_models(&d), &prior, 0, OPEN_LEFT, 1);
        assert!((b.weights[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ties_pick_the_lowest_model() {
        let b = Belief::uniform(4);
        assert_eq!(b.argmax(), 0);
        let b = Belief { weights: vec![0.2, 0.4, 0.4] };
        assert_eq!(b.argmax(), 1);
    }

    #[test]
    fn perfect_signal_recovers_actions() {
        let mut d = make_tiger_competitive();
        for (ja, row) in d.private_observation[0].as_mut().unwrap().iter_mut().enumerate() {
            *row = (0..3).map(|s| if s == ja % 3 { 1.0 } else { 0.0 }).collect();
        }
        let sim = Simulator::new(&d).unwrap();
        let ps = tiger_opponent_policies();
        let models = ModelSet::new(&d, ps.clone()).unwrap();
        let me = ReactivePolicy::constant(*sim.tree(0), 3, LISTEN).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut out = JointTrajectory::default();
        for c in 0..ps.len() {
            for _ in 0..50 {
                sim.sample(&[me.view(), ps[c].view()], &mut rng, &mut out);
                let pred = predict_opponent_actions(&d, &models, &out.agents[0], Prediction::ArgmaxModel);
                assert_eq!(pred, out.agents[1].actions);
            }
        }
    }

    #[test]
    fn bin_ranges_never_exceed_the_full_range() {
        let d = make_tiger_competitive();
        let sim = Simulator::new(&d).unwrap();
        let ex = OpponentExecutor::fixed(tiger_opponent_policies()[0].clone());
        let p = ReactivePolicy::constant(*sim.tree(0), 3, LISTEN).unwrap();
        let models = ModelSet::new(&d, tiger_opponent_policies()).unwrap();
        let l = McesipLearner::new(&sim, &ex, models, p, IpConfig::new(0.2, 0.1)).unwrap();
        // all-listen over three steps: 3 · 2 · 110 / 165
        assert!((l.lambda_aj(&[0, 0, 0]) - 4.0).abs() < 1e-12);
        assert!((l.lambda_aj(&[1, 0, 0]) - 2.0 * (1.0 + 2.0 * 110.0 / 165.0)).abs() < 1e-12);
        assert!((l.lambda_bar(&[0, 0, 0]) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bins_stay_paired_and_runs_replay() {
        let d = make_tiger_competitive();
        let sim = Simulator::new(&d).unwrap();
        let ex = OpponentExecutor::uniform(vec![tiger_opponent_policies()[0].clone(), tiger_opponent_policies()[7].clone()]).unwrap();
        let p = ReactivePolicy::constant(*sim.tree(0), 3, LISTEN).unwrap();
        let models = ModelSet::new(&d, tiger_opponent_policies()).unwrap();
        let mut l = McesipLearner::new(&sim, &ex, models.clone(), p.clone(), IpConfig::new(0.2, 0.1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let Some(seq) = l.sample_step(&mut rng).unwrap() else { break };
            for (key, n, _) in l.bins_at(seq) {
                for a in 0..3 {
                    assert_eq!(l.bin_entry(seq, &key, a).unwrap().count, n);
                }
            }
        }
        let mut cfg = IpConfig::new(0.5, 0.1);
        cfg.search.max_trajectories = 100_000;
        let run = |s| {
            McesipLearner::new(&sim, &ex, models.clone(), p.clone(), cfg.clone())
                .unwrap()
                .run(&mut ChaCha8Rng::seed_from_u64(s))
                .unwrap()
        };
        assert_eq!(serde_json::to_string(&run(9)).unwrap(), serde_json::to_string(&run(9)).unwrap());
    }

    fn filled_bin(l: &McesipLearner<'_>, key: &[ActionId], qs: [f64; 3]) -> Bin {
        let bounds = l.bin_bounds(0, key).unwrap();
        let k = bounds.k;
        Bin {
            entries: qs.iter().map(|&q| Entry { q, count: k }).collect(),
            pending: vec![VecDeque::new(); 3],
            bounds,
            certified: false,
        }
    }

    #[test]
    fn one_dominating_bin_fires_unless_strict() {
        let d = make_tiger_competitive();
        let sim = Simulator::new(&d).unwrap();
        let ex = OpponentExecutor::fixed(tiger_opponent_policies()[0].clone());
        let p = ReactivePolicy::constant(*sim.tree(0), 3, LISTEN).unwrap();
        let models = ModelSet::new(&d, tiger_opponent_policies()).unwrap();
        for strict in [false, true] {
            let mut cfg = IpConfig::new(0.2, 0.1);
            cfg.strict = strict;
            let mut l = McesipLearner::new(&sim, &ex, models.clone(), p.clone(), cfg).unwrap();
            let root = l.policy().tree().root();
            // open-left wins by 1 in one bin and loses by 1 in the other
            let a = filled_bin(&l, &[0, 0, 0], [0.0, 1.0, 0.0]);
            let b = filled_bin(&l, &[1, 0, 0], [0.0, -1.0, 0.0]);
            l.bins[root as usize].insert(vec![0, 0, 0], a);
            l.bins[root as usize].insert(vec![1, 0, 0], b);
            let d = l.transform_test(root);
            if strict {
                assert_ne!(d, Decision::Transform { seq: root, action: OPEN_LEFT });
            } else {
                assert_eq!(d, Decision::Transform { seq: root, action: OPEN_LEFT });
            }
        }
    }
}
