//! Exact evaluation by enumerating the finite outcome tree.
//!
//! Every function here walks states, transitions, joint observations and
//! opponent mixture components in a fixed order, so results are bit-stable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domains::{DomainSpec, OpponentExecutor};
use crate::error::{Error, Result};
use crate::policy::{ActionId, NeighborRef, PolicyView, ReactivePolicy, SeqId};

pub const DEFAULT_NODE_CAP: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactValue {
    pub value: f64,
    pub per_agent: Option<Vec<f64>>,
}

/// One complete episode of the outcome tree and its probability.
pub struct Leaf<'a> {
    pub prob: f64,
    pub states: &'a [u32],
    /// `actions[i][t]`.
    pub actions: &'a [Vec<ActionId>],
    pub rewards: &'a [Vec<f64>],
    /// `histories[i][t]` is the history agent `i` acted on at step `t`.
    pub histories: &'a [Vec<SeqId>],
}

/// Joint observation distribution after reaching `next` under `ja`, as
/// `(prob, symbol per agent)`.
pub fn joint_observations(domain: &DomainSpec, next: usize, ja: usize) -> Vec<(f64, Vec<u16>)> {
    let z = domain.agent_count();
    let mut out: Vec<(f64, Vec<u16>)> = Vec::new();
    let publics: Vec<(f64, Vec<u16>)> = if domain.shared_env() {
        domain
            .env_row(0, next, ja)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(u, &p)| (p, vec![u as u16; z]))
            .collect()
    } else {
        let mut acc = vec![(1.0, Vec::with_capacity(z))];
        for i in 0..z {
            let row = domain.env_row(i, next, ja);
            acc = acc
                .into_iter()
                .flat_map(|(p, v)| {
                    row.iter().enumerate().filter(|(_, &q)| q > 0.0).map(move |(u, &q)| {
                        let mut v = v.clone();
                        v.push(u as u16);
                        (p * q, v)
                    })
                })
                .collect();
        }
        acc
    };
    for (p, pubs) in publics {
        let mut acc = vec![(p, Vec::with_capacity(z))];
        for (i, &u) in pubs.iter().enumerate() {
            let alphabet = domain.agents[i].alphabet;
            let choices: Vec<(f64, u16)> = match &domain.private_observation[i] {
                Some(t) => t[ja]
                    .iter()
                    .enumerate()
                    .filter(|(_, &q)| q > 0.0)
                    .map(|(v, &q)| (q, u * alphabet.stride() + v as u16))
                    .collect(),
                None => vec![(1.0, u)],
            };
            acc = acc
                .into_iter()
                .flat_map(|(p, v)| {
                    choices.iter().map(move |&(q, s)| {
                        let mut v = v.clone();
                        v.push(s);
                        (p * q, v)
                    })
                })
                .collect();
        }
        out.extend(acc);
    }
    out
}

struct Walker<'a, 'v, F> {
    domain: &'a DomainSpec,
    views: &'a [PolicyView<'v>],
    ja_count: usize,
    cap: u64,
    nodes: u64,
    states: Vec<u32>,
    actions: Vec<Vec<ActionId>>,
    rewards: Vec<Vec<f64>>,
    histories: Vec<Vec<SeqId>>,
    visit: F,
}

impl<F: FnMut(&Leaf<'_>)> Walker<'_, '_, F> {
    fn step(&mut self, t: usize, state: usize, hist: &[SeqId], prob: f64) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.cap {
            return Err(Error::EnumerationRefused { cap: self.cap });
        }
        let z = self.views.len();
        let acts: Vec<ActionId> = (0..z).map(|i| self.views[i].act(hist[i])).collect();
        let ja = self.domain.joint_index(&acts);
        self.states.push(state as u32);
        for i in 0..z {
            self.actions[i].push(acts[i]);
            self.histories[i].push(hist[i]);
        }
        let row = &self.domain.transitions[state * self.ja_count + ja];
        for o in row.iter().filter(|o| o.prob > 0.0) {
            for i in 0..z {
                self.rewards[i].push(o.rewards[i]);
            }
            let p = prob * o.prob;
            if t + 1 == self.domain.horizon {
                self.states.push(o.next);
                (self.visit)(&Leaf {
                    prob: p,
                    states: &self.states,
                    actions: &self.actions,
                    rewards: &self.rewards,
                    histories: &self.histories,
                });
                self.states.pop();
            } else {
                for (q, syms) in joint_observations(self.domain, o.next as usize, ja) {
                    let child: Vec<SeqId> = (0..z)
                        .map(|i| self.views[i].tree().child_at(hist[i], t, syms[i]))
                        .collect();
                    self.step(t + 1, o.next as usize, &child, p * q)?;
                }
            }
            for i in 0..z {
                self.rewards[i].pop();
            }
        }
        self.states.pop();
        for i in 0..z {
            self.actions[i].pop();
            self.histories[i].pop();
        }
        Ok(())
    }
}

/// Visit every leaf of the outcome tree with all agents following `views`.
/// Returns the number of internal nodes expanded.
pub fn for_each_leaf(
    domain: &DomainSpec,
    views: &[PolicyView<'_>],
    cap: u64,
    visit: impl FnMut(&Leaf<'_>),
) -> Result<u64> {
    if !domain.enumerable {
        return Err(Error::EnumerationRefused { cap });
    }
    if domain.horizon == 0 {
        return Ok(0);
    }
    let z = domain.agent_count();
    let mut w = Walker {
        domain,
        views,
        ja_count: domain.joint_action_count(),
        cap,
        nodes: 0,
        states: Vec::new(),
        actions: vec![Vec::new(); z],
        rewards: vec![Vec::new(); z],
        histories: vec![Vec::new(); z],
        visit,
    };
    let root = vec![0 as SeqId; z];
    for (s, &p) in domain.initial.iter().enumerate() {
        if p > 0.0 {
            w.step(0, s, &root, p)?;
        }
    }
    Ok(w.nodes)
}

/// Expected total reward of every agent under a joint profile.
pub fn exact_joint_values(domain: &DomainSpec, views: &[PolicyView<'_>]) -> Result<Vec<f64>> {
    let mut v = vec![0.0; domain.agent_count()];
    for_each_leaf(domain, views, DEFAULT_NODE_CAP, |leaf| {
        for (i, r) in leaf.rewards.iter().enumerate() {
            v[i] += leaf.prob * r.iter().sum::<f64>();
        }
    })?;
    Ok(v)
}

/// Subject (agent 0) value against an opponent executor, averaging mixture
/// components by weight.
pub fn exact_policy_value(
    domain: &DomainSpec,
    policy: PolicyView<'_>,
    opponent: &OpponentExecutor,
) -> Result<ExactValue> {
    let mut total = vec![0.0; domain.agent_count()];
    for (pi, &w) in opponent.policies.iter().zip(&opponent.mixture_weights) {
        let v = exact_joint_values(domain, &[policy, pi.view()])?;
        for (t, x) in total.iter_mut().zip(v) {
            *t += w * x;
        }
    }
    Ok(ExactValue { value: total[0], per_agent: Some(total) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalCheck {
    pub holds: bool,
    pub value: f64,
    /// Neighbor with the largest value gain, and the gain.
    pub worst: Option<(NeighborRef, f64)>,
}

/// Whether no single-entry neighbor beats `policy` by more than `epsilon`.
pub fn epsilon_local_check(
    domain: &DomainSpec,
    policy: &ReactivePolicy,
    opponent: &OpponentExecutor,
    epsilon: f64,
) -> Result<LocalCheck> {
    let base = exact_policy_value(domain, policy.view(), opponent)?.value;
    let mut worst: Option<(NeighborRef, f64)> = None;
    for n in policy.neighbors() {
        let v = exact_policy_value(domain, policy.view_with(n.seq_id, n.action), opponent)?.value;
        let gap = v - base;
        if worst.as_ref().is_none_or(|(_, g)| gap > *g) {
            worst = Some((n, gap));
        }
    }
    let holds = worst.as_ref().is_none_or(|(_, g)| !(*g > epsilon));
    Ok(LocalCheck { holds, value: base, worst })
}

/// Range bound on the difference of post-history returns between `policy`
/// and its neighbor: `(max − min)` of the neighbor's returns plus `(max −
/// min)` of the incumbent's, over leaves that pass through the neighbor's
/// history. `restrict` keeps only leaves where the opponent's action sequence
/// matches.
pub fn brute_force_lambda(
    domain: &DomainSpec,
    policy: &ReactivePolicy,
    neighbor: &NeighborRef,
    opponent: &OpponentExecutor,
    restrict: Option<&[ActionId]>,
) -> Result<f64> {
    if policy.action(neighbor.seq_id) == neighbor.action {
        return Ok(0.0);
    }
    let depth = policy.tree().depth(neighbor.seq_id);
    let range = |view: PolicyView<'_>| -> Result<Option<(f64, f64)>> {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for pi in &opponent.policies {
            for_each_leaf(domain, &[view, pi.view()], DEFAULT_NODE_CAP, |leaf| {
                if leaf.histories[0][depth] != neighbor.seq_id {
                    return;
                }
                if let Some(aj) = restrict {
                    if leaf.actions[1].as_slice() != aj {
                        return;
                    }
                }
                let r: f64 = leaf.rewards[0][depth..].iter().sum();
                hi = hi.max(r);
                lo = lo.min(r);
            })?;
        }
        Ok((hi >= lo).then_some((hi, lo)))
    };
    let a = range(policy.view())?;
    let b = range(policy.view_with(neighbor.seq_id, neighbor.action))?;
    Ok(match (a, b) {
        (Some((h1, l1)), Some((h2, l2))) => (h1 - l1) + (h2 - l2),
        _ => 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Particle {
    state: u32,
    component: u32,
    opp_hist: SeqId,
}

struct Responder<'a> {
    domain: &'a DomainSpec,
    opponent: &'a OpponentExecutor,
    ja_count: usize,
    table: Vec<ActionId>,
    fixed: &'a dyn Fn(SeqId) -> Option<ActionId>,
}

impl Responder<'_> {
    fn solve(&mut self, h: SeqId, depth: usize, dist: &BTreeMap<Particle, f64>) -> f64 {
        let tree = self.domain.tree(0).expect("validated tree");
        let horizon = self.domain.horizon;
        let actions: Vec<ActionId> = match (self.fixed)(h) {
            Some(a) => vec![a],
            None => (0..self.domain.action_count(0) as ActionId).collect(),
        };
        let mut best = (f64::NEG_INFINITY, actions[0]);
        let mut best_table: Option<Vec<ActionId>> = None;
        for &a in &actions {
            let mut q = 0.0;
            let mut children: BTreeMap<u16, BTreeMap<Particle, f64>> = BTreeMap::new();
            for (p, &mass) in dist {
                let aj = self.opponent.policies[p.component as usize].action(p.opp_hist);
                let ja = self.domain.joint_index(&[a, aj]);
                for o in &self.domain.transitions[p.state as usize * self.ja_count + ja] {
                    if o.prob <= 0.0 {
                        continue;
                    }
                    let m = mass * o.prob;
                    q += m * o.rewards[0];
                    if depth + 1 < horizon {
                        let opp_tree = self.opponent.policies[p.component as usize].tree();
                        for (pq, syms) in joint_observations(self.domain, o.next as usize, ja) {
                            let key = Particle {
                                state: o.next,
                                component: p.component,
                                opp_hist: opp_tree.child_at(p.opp_hist, depth, syms[1]),
                            };
                            *children.entry(syms[0]).or_default().entry(key).or_default() += m * pq;
                        }
                    }
                }
            }
            for (sym, child) in &children {
                q += self.solve(tree.child_at(h, depth, *sym), depth + 1, child);
            }
            if q > best.0 {
                best = (q, a);
                if actions.len() > 1 {
                    best_table = Some(self.table.clone());
                }
            }
        }
        // children were last solved under the final action tried
        if let Some(t) = best_table {
            self.table = t;
        }
        self.table[h as usize] = best.1;
        best.0
    }
}

/// Best subject policy against a fixed two-agent opponent executor, with
/// `fixed(h)` pinning the action at some histories. Unreachable histories
/// keep `fixed(h)` or action 0. Returns the policy and its exact value.
pub fn best_response(
    domain: &DomainSpec,
    opponent: &OpponentExecutor,
    fixed: &dyn Fn(SeqId) -> Option<ActionId>,
) -> Result<(ReactivePolicy, f64)> {
    if !domain.enumerable || domain.agent_count() != 2 {
        return Err(Error::EnumerationRefused { cap: DEFAULT_NODE_CAP });
    }
    let tree = domain.tree(0)?;
    let mut r = Responder {
        domain,
        opponent,
        ja_count: domain.joint_action_count(),
        table: (0..tree.len() as SeqId).map(|h| fixed(h).unwrap_or(0)).collect(),
        fixed,
    };
    let mut root = BTreeMap::new();
    for (s, &p) in domain.initial.iter().enumerate() {
        for (c, &w) in opponent.mixture_weights.iter().enumerate() {
            if p > 0.0 && w > 0.0 {
                root.insert(Particle { state: s as u32, component: c as u32, opp_hist: 0 }, p * w);
            }
        }
    }
    let value = if domain.horizon == 0 { 0.0 } else { r.solve(0, 0, &root) };
    let policy = ReactivePolicy::from_table(tree, domain.action_count(0) as u16, r.table)?;
    Ok((policy, value))
}

/// Joint neighbor of a team profile: every agent's action replaced at a
/// common-length joint history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointNeighbor {
    pub histories: Vec<SeqId>,
    pub actions: Vec<ActionId>,
}

/// Whether no joint neighbor improves every agent by more than `epsilon`.
/// Returns the check and the largest simultaneous gain found.
pub fn joint_epsilon_local_check(
    domain: &DomainSpec,
    policies: &[ReactivePolicy],
    epsilon: f64,
) -> Result<(bool, Option<(JointNeighbor, f64)>)> {
    let base = exact_joint_values(domain, &policies.iter().map(|p| p.view()).collect::<Vec<_>>())?;
    let mut worst: Option<(JointNeighbor, f64)> = None;
    for n in joint_neighbors(domain, policies)? {
        let views: Vec<PolicyView<'_>> =
            policies.iter().enumerate().map(|(i, p)| p.view_with(n.histories[i], n.actions[i])).collect();
        let v = exact_joint_values(domain, &views)?;
        let gain = v.iter().zip(&base).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
        if worst.as_ref().is_none_or(|(_, g)| gain > *g) {
            worst = Some((n, gain));
        }
    }
    let holds = worst.as_ref().is_none_or(|(_, g)| !(*g > epsilon));
    Ok((holds, worst))
}

/// All joint actions at all common-length joint histories, excluding the
/// profile's own joint action at each.
pub fn joint_neighbors(domain: &DomainSpec, policies: &[ReactivePolicy]) -> Result<Vec<JointNeighbor>> {
    let z = domain.agent_count();
    let trees = (0..z).map(|i| domain.tree(i)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for depth in 0..domain.horizon {
        let ranges: Vec<Vec<SeqId>> = trees.iter().map(|t| t.ids_at_depth(depth).collect()).collect();
        let mut combos: Vec<Vec<SeqId>> = vec![Vec::new()];
        for r in &ranges {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    r.iter().map(move |&h| {
                        let mut c = c.clone();
                        c.push(h);
                        c
                    })
                })
                .collect();
        }
        for hs in combos {
            let current: Vec<ActionId> = (0..z).map(|i| policies[i].action(hs[i])).collect();
            for ja in 0..domain.joint_action_count() {
                let acts = domain.joint_actions(ja);
                if acts != current {
                    out.push(JointNeighbor { histories: hs.clone(), actions: acts });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_tiger_competitive, tiger_opponent_policies};

    fn listen(domain: &DomainSpec, agent: usize) -> ReactivePolicy {
        ReactivePolicy::constant(domain.tree(agent).unwrap(), 3, 0).unwrap()
    }

    #[test]
    fn always_listen_pair() {
        let d = make_tiger_competitive();
        let ex = OpponentExecutor::fixed(listen(&d, 1));
        let v = exact_policy_value(&d, listen(&d, 0).view(), &ex).unwrap();
        assert!((v.value + 1.5).abs() < 1e-12);
    }

    #[test]
    fn mixture_is_linear() {
        let d = make_tiger_competitive();
        let ps = tiger_opponent_policies();
        let me = ReactivePolicy::from_fn(d.tree(0).unwrap(), 3, |s| (s.len() % 3) as ActionId).unwrap();
        let a = exact_policy_value(&d, me.view(), &OpponentExecutor::fixed(ps[1].clone())).unwrap().value;
        let b = exact_policy_value(&d, me.view(), &OpponentExecutor::fixed(ps[6].clone())).unwrap().value;
        let mix = OpponentExecutor::mixture(vec![ps[1].clone(), ps[6].clone()], vec![0.3, 0.7]).unwrap();
        let m = exact_policy_value(&d, me.view(), &mix).unwrap().value;
        assert!((m - (0.3 * a + 0.7 * b)).abs() < 1e-9);
    }

    #[test]
    fn best_response_is_local_optimum() {
        let d = make_tiger_competitive();
        let ex = OpponentExecutor::uniform(tiger_opponent_policies()).unwrap();
        let (br, v) = best_response(&d, &ex, &|_| None).unwrap();
        let exact = exact_policy_value(&d, br.view(), &ex).unwrap().value;
        assert!((v - exact).abs() < 1e-9);
        assert!(epsilon_local_check(&d, &br, &ex, 0.0).unwrap().holds);
        let bad = listen(&d, 0).transform_id(0, 1).unwrap();
        let c = epsilon_local_check(&d, &bad, &ex, 0.0).unwrap();
        assert!(!c.holds && c.worst.unwrap().1 > 0.0);
        assert!(epsilon_local_check(&d, &bad, &ex, f64::INFINITY).unwrap().holds);
    }

    #[test]
    fn lambda_identity_is_zero() {
        let d = make_tiger_competitive();
        let p = listen(&d, 0);
        let ex = OpponentExecutor::fixed(listen(&d, 1));
        let n = NeighborRef { sequence: Default::default(), seq_id: 0, action: 0 };
        assert_eq!(brute_force_lambda(&d, &p, &n, &ex, None).unwrap(), 0.0);
    }
}
