//! Seeded generative sampling from a [`DomainSpec`].

use rand::Rng;

use crate::domains::{DomainSpec, EnvObservation};
use crate::error::Result;
use crate::policy::{ActionId, PolicyView, SeqId, SequenceTree, Trajectory};

/// Cumulative copies of the domain's stochastic tables.
#[derive(Clone, Debug)]
pub struct Simulator {
    domain: DomainSpec,
    trees: Vec<SequenceTree>,
    ja_count: usize,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    env: Vec<Vec<Vec<f64>>>,
    private: Vec<Option<Vec<Vec<f64>>>>,
}

/// All agents' records of one episode plus the hidden state path.
#[derive(Clone, Debug, Default)]
pub struct JointTrajectory {
    pub agents: Vec<Trajectory>,
    /// State at each step, then the final state.
    pub states: Vec<u32>,
    pub joint_actions: Vec<u32>,
}

impl JointTrajectory {
    fn reset(&mut self, agents: usize) {
        self.agents.resize_with(agents, Trajectory::default);
        self.agents.iter_mut().for_each(Trajectory::clear);
        self.states.clear();
        self.joint_actions.clear();
    }
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

#[inline]
fn draw(cum: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>() * cum[cum.len() - 1];
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

impl Simulator {
    pub fn new(domain: &DomainSpec) -> Result<Self> {
        domain.validate()?;
        let trees = (0..domain.agent_count()).map(|i| domain.tree(i)).collect::<Result<Vec<_>>>()?;
        let env = match &domain.env_observation {
            EnvObservation::Shared(t) => vec![t.iter().map(|r| cumulative(r)).collect()],
            EnvObservation::PerAgent(ts) => {
                ts.iter().map(|t| t.iter().map(|r| cumulative(r)).collect()).collect()
            }
        };
        Ok(Self {
            trees,
            ja_count: domain.joint_action_count(),
            initial: cumulative(&domain.initial),
            transitions: domain
                .transitions
                .iter()
                .map(|row| cumulative(&row.iter().map(|o| o.prob).collect::<Vec<_>>()))
                .collect(),
            env,
            private: domain
                .private_observation
                .iter()
                .map(|t| t.as_ref().map(|t| t.iter().map(|r| cumulative(r)).collect()))
                .collect(),
            domain: domain.clone(),
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn tree(&self, agent: usize) -> &SequenceTree {
        &self.trees[agent]
    }

    pub fn horizon(&self) -> usize {
        self.domain.horizon
    }

    /// One full episode with every agent following its view.
    pub fn sample(&self, views: &[PolicyView<'_>], rng: &mut impl Rng, out: &mut JointTrajectory) {
        self.run(views, &[], false, rng, out);
    }

    /// Episode that stops as soon as it is known that the targeted agents'
    /// histories will not pass through their targets.
    ///
    /// `targets[i]` is agent `i`'s required history id, if any. With
    /// `require_all` the episode is abandoned once any target is missed,
    /// otherwise once every target is missed. Returns which targets were
    /// realized; an abandoned episode is left truncated.
    pub fn sample_targeted(
        &self,
        views: &[PolicyView<'_>],
        targets: &[Option<SeqId>],
        require_all: bool,
        rng: &mut impl Rng,
        out: &mut JointTrajectory,
    ) -> Vec<bool> {
        self.run(views, targets, require_all, rng, out)
    }

    fn run(
        &self,
        views: &[PolicyView<'_>],
        targets: &[Option<SeqId>],
        require_all: bool,
        rng: &mut impl Rng,
        out: &mut JointTrajectory,
    ) -> Vec<bool> {
        let z = self.domain.agent_count();
        debug_assert_eq!(views.len(), z);
        let horizon = self.domain.horizon;
        out.reset(z);
        // per agent: (target depth, target prefix at each depth)
        let goals: Vec<Option<(usize, Vec<SeqId>)>> = (0..z)
            .map(|i| {
                targets.get(i).copied().flatten().map(|id| {
                    let tree = &self.trees[i];
                    let d = tree.depth(id);
                    let seq = tree.sequence(id);
                    let mut prefixes = Vec::with_capacity(d + 1);
                    let mut cur = tree.root();
                    prefixes.push(cur);
                    for (k, &s) in seq.symbols().iter().enumerate() {
                        cur = tree.child_at(cur, k, s);
                        prefixes.push(cur);
                    }
                    (d, prefixes)
                })
            })
            .collect();
        let mut alive: Vec<bool> = goals.iter().map(|g| g.is_some()).collect();
        let any_goal = alive.iter().any(|&a| a);
        let mut hist = vec![0 as SeqId; z];
        let mut state = draw(&self.initial, rng);
        let mut acts = vec![0 as ActionId; z];
        for traj in out.agents.iter_mut() {
            traj.observations.push(None);
        }
        for t in 0..horizon {
            out.states.push(state as u32);
            for i in 0..z {
                acts[i] = views[i].act(hist[i]);
                out.agents[i].actions.push(acts[i]);
                out.agents[i].histories.push(hist[i]);
            }
            let ja = self.domain.joint_index(&acts);
            out.joint_actions.push(ja as u32);
            let row = state * self.ja_count + ja;
            let k = draw(&self.transitions[row], rng);
            let outcome = &self.domain.transitions[row][k];
            let next = outcome.next as usize;
            let orow = next * self.ja_count + ja;
            let shared = if self.env.len() == 1 { Some(draw(&self.env[0][orow], rng) as u16) } else { None };
            for i in 0..z {
                out.agents[i].rewards.push(outcome.rewards[i]);
                let public = shared.unwrap_or_else(|| draw(&self.env[i][orow], rng) as u16);
                let sym = match &self.private[i] {
                    Some(p) => public * self.domain.agents[i].alphabet.stride() + draw(&p[ja], rng) as u16,
                    None => public,
                };
                if t + 1 < horizon {
                    out.agents[i].observations.push(Some(sym));
                    hist[i] = self.trees[i].child_at(hist[i], t, sym);
                    if let Some((d, prefixes)) = &goals[i] {
                        if alive[i] && t + 1 <= *d && hist[i] != prefixes[t + 1] {
                            alive[i] = false;
                        }
                    }
                } else {
                    out.agents[i].terminal_observation = Some(sym);
                }
            }
            state = next;
            if any_goal {
                let missed = goals.iter().zip(&alive).any(|(g, &a)| g.is_some() && !a);
                let all_missed = goals.iter().zip(&alive).all(|(g, &a)| g.is_none() || !a);
                if (require_all && missed) || all_missed {
                    return alive;
                }
            }
        }
        out.states.push(state as u32);
        alive
    }
}
