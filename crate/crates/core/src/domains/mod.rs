//! Tabular multiagent domains and opponent executors.
//!
//! A [`DomainSpec`] is a finite-horizon multiagent POMDP written out as dense
//! tables. Joint actions are mixed-radix numbers with agent 0 most
//! significant. Each agent's observation is a composite of an environment
//! symbol (shared by all agents, or drawn independently per agent) and an
//! optional private signal that depends only on the joint action.

mod auav;
mod firefighting;
mod laundering;
mod tiger;

pub use auav::{auav_prey_policies, make_auav};
pub use firefighting::make_firefighting;
pub use laundering::{laundering_red_policies, make_money_laundering};
pub use tiger::{make_tiger_competitive, make_tiger_cooperative, tiger_opponent_policies};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionId, Alphabet, ObsSequence, ReactivePolicy, SeqId, SequenceTree};

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub actions: Vec<String>,
    pub alphabet: Alphabet,
}

impl AgentSpec {
    pub fn action_count(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: u32,
    pub prob: f64,
    /// One reward per agent.
    pub rewards: Vec<f64>,
}

/// Environment observation kernels, rows indexed by `next_state * JA + joint_action`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvObservation {
    /// One draw seen by every agent.
    Shared(Vec<Vec<f64>>),
    /// Independent draws, one table per agent.
    PerAgent(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Team,
    PerAgent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub horizon: usize,
    pub states: Vec<String>,
    pub agents: Vec<AgentSpec>,
    pub initial: Vec<f64>,
    /// Rows indexed by `state * JA + joint_action`.
    pub transitions: Vec<Vec<Outcome>>,
    pub env_observation: EnvObservation,
    /// Per agent, rows indexed by joint action.
    pub private_observation: Vec<Option<Vec<Vec<f64>>>>,
    pub reward_kind: RewardKind,
    /// `(R_min, R_max)` per agent.
    pub reward_bounds: Vec<(f64, f64)>,
    /// Whether exact enumeration of the outcome tree is supported.
    pub enumerable: bool,
}

impl DomainSpec {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn action_count(&self, agent: usize) -> usize {
        self.agents[agent].action_count()
    }

    pub fn joint_action_count(&self) -> usize {
        self.agents.iter().map(|a| a.action_count()).product()
    }

    pub fn joint_index(&self, actions: &[ActionId]) -> usize {
        self.agents
            .iter()
            .zip(actions)
            .fold(0, |acc, (spec, &a)| acc * spec.action_count() + a as usize)
    }

    pub fn joint_actions(&self, mut index: usize) -> Vec<ActionId> {
        let mut out = vec![0; self.agents.len()];
        for (i, spec) in self.agents.iter().enumerate().rev() {
            let n = spec.action_count();
            out[i] = (index % n) as ActionId;
            index /= n;
        }
        out
    }

    pub fn tree(&self, agent: usize) -> Result<SequenceTree> {
        SequenceTree::new(self.agents[agent].alphabet.size(), self.horizon)
    }

    pub fn env_row(&self, agent: usize, next: usize, ja: usize) -> &[f64] {
        let row = next * self.joint_action_count() + ja;
        match &self.env_observation {
            EnvObservation::Shared(t) => &t[row],
            EnvObservation::PerAgent(t) => &t[agent][row],
        }
    }

    pub fn shared_env(&self) -> bool {
        matches!(self.env_observation, EnvObservation::Shared(_))
    }

    /// `O_i(ω | joint action)` for agent `agent`'s private signal.
    pub fn private_likelihood(&self, agent: usize, ja: usize, signal: u16) -> f64 {
        match &self.private_observation[agent] {
            Some(t) => t[ja][signal as usize],
            None => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_count();
        let ja = self.joint_action_count();
        let z = self.agent_count();
        let bad = |m: String| Err(Error::InvalidDomain(format!("{}: {m}", self.name)));
        if self.initial.len() != n {
            return bad("initial distribution size".into());
        }
        check_row(&self.initial).map_err(|e| Error::InvalidDomain(format!("initial: {e}")))?;
        if self.transitions.len() != n * ja {
            return bad("transition table size".into());
        }
        if self.private_observation.len() != z || self.reward_bounds.len() != z {
            return bad("per-agent table count".into());
        }
        for (row, outs) in self.transitions.iter().enumerate() {
            let total: f64 = outs.iter().map(|o| o.prob).sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return bad(format!("transition row {row} sums to {total}"));
            }
            for o in outs {
                if o.next as usize >= n || o.prob < 0.0 || o.rewards.len() != z {
                    return bad(format!("malformed outcome in row {row}"));
                }
                for (i, &r) in o.rewards.iter().enumerate() {
                    let (lo, hi) = self.reward_bounds[i];
                    if !r.is_finite() || r < lo - 1e-9 || r > hi + 1e-9 {
                        return bad(format!("reward {r} outside [{lo}, {hi}] in row {row}"));
                    }
                }
            }
        }
        for agent in 0..z {
            let width = self.agents[agent].alphabet.public as usize;
            for s in 0..n {
                for a in 0..ja {
                    let r = self.env_row(agent, s, a);
                    if r.len() != width {
                        return bad(format!("observation row width for agent {agent}"));
                    }
                    check_row(r).map_err(|e| Error::InvalidDomain(format!("observation row: {e}")))?;
                }
            }
            match (&self.private_observation[agent], self.agents[agent].alphabet.private) {
                (None, None) => {}
                (Some(t), Some(w)) => {
                    if t.len() != ja {
                        return bad(format!("private table rows for agent {agent}"));
                    }
                    for r in t {
                        if r.len() != w as usize {
                            return bad(format!("private row width for agent {agent}"));
                        }
                        check_row(r).map_err(|e| Error::InvalidDomain(format!("private row: {e}")))?;
                    }
                }
                _ => return bad(format!("private alphabet mismatch for agent {agent}")),
            }
        }
        if let EnvObservation::Shared(_) = self.env_observation {
            let w = self.agents[0].alphabet.public;
            if self.agents.iter().any(|a| a.alphabet.public != w) {
                return bad("shared observation needs equal public alphabets".into());
            }
        }
        Ok(())
    }

    /// Per-step `(max, min)` of `agent`'s reward given that agent `other`
    /// plays `other_action`, over all states, other actions and outcomes.
    pub fn reward_range_given(&self, agent: usize, other: usize, other_action: ActionId) -> (f64, f64) {
        let ja_count = self.joint_action_count();
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for s in 0..self.state_count() {
            for ja in 0..ja_count {
                if self.joint_actions(ja)[other] != other_action {
                    continue;
                }
                for o in &self.transitions[s * ja_count + ja] {
                    if o.prob > 0.0 {
                        hi = hi.max(o.rewards[agent]);
                        lo = lo.min(o.rewards[agent]);
                    }
                }
            }
        }
        (hi, lo)
    }

    /// Structured text rendering of the full model.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("domain tables serialize")
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::InvalidDomain(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err("probability outside [0, 1]".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("row sums to {total}"));
    }
    Ok(())
}

/// Signal that reports `truth` with probability `accuracy` and each other
/// symbol with an equal share of the rest.
pub(crate) fn noisy_signal(width: usize, truth: usize, accuracy: f64) -> Vec<f64> {
    if width == 1 {
        return vec![1.0];
    }
    let other = (1.0 - accuracy) / (width - 1) as f64;
    (0..width).map(|i| if i == truth { accuracy } else { other }).collect()
}

/// A fixed policy or a mixture over fixed policies, one drawn per trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpponentExecutor {
    pub policies: Vec<ReactivePolicy>,
    pub mixture_weights: Vec<f64>,
}

impl OpponentExecutor {
    pub fn fixed(policy: ReactivePolicy) -> Self {
        Self { policies: vec![policy], mixture_weights: vec![1.0] }
    }

    pub fn mixture(policies: Vec<ReactivePolicy>, weights: Vec<f64>) -> Result<Self> {
        if policies.is_empty() || policies.len() != weights.len() {
            return Err(Error::Config("mixture needs one weight per policy".into()));
        }
        check_row(&weights).map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
        Ok(Self { policies, mixture_weights: weights })
    }

    pub fn uniform(policies: Vec<ReactivePolicy>) -> Result<Self> {
        let w = vec![1.0 / policies.len() as f64; policies.len()];
        Self::mixture(policies, w)
    }

    /// Index of the component that plays this trajectory.
    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        if self.policies.len() == 1 {
            return 0;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &w) in self.mixture_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.policies.len() - 1
    }
}

/// Action of the drawn component at the given history.
pub fn opponent_step(executor: &OpponentExecutor, component: usize, history: &ObsSequence) -> Result<ActionId> {
    executor.policies[component].act(history)
}

/// Action of the drawn component at a history id.
pub fn opponent_step_id(executor: &OpponentExecutor, component: usize, id: SeqId) -> ActionId {
    executor.policies[component].action(id)
}
