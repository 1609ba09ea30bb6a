//! Observation alphabets, history sequences, reactive policies and trajectories.
//!
//! Histories of length `0..T` are numbered densely: all sequences of length
//! `l` occupy a contiguous id block starting at `(|Ω|^l - 1)/(|Ω| - 1)`, and
//! within a block a sequence is its base-`|Ω|` numeral. The empty history is
//! id 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ActionId = u16;
pub type SeqId = u32;

/// Longest supported horizon.
pub const MAX_HORIZON: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationSymbol {
    pub public_id: u16,
    pub private_id: Option<u16>,
}

impl ObservationSymbol {
    pub fn public(public_id: u16) -> Self {
        Self { public_id, private_id: None }
    }

    pub fn composite(public_id: u16, private_id: u16) -> Self {
        Self { public_id, private_id: Some(private_id) }
    }
}

/// An agent's observation alphabet. Composite symbols flatten to
/// `public * stride + private`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    pub public: u16,
    pub private: Option<u16>,
}

impl Alphabet {
    pub fn public_only(public: u16) -> Self {
        Self { public, private: None }
    }

    pub fn with_private(public: u16, private: u16) -> Self {
        Self { public, private: Some(private) }
    }

    pub fn stride(&self) -> u16 {
        self.private.unwrap_or(1)
    }

    pub fn size(&self) -> usize {
        self.public as usize * self.stride() as usize
    }

    pub fn encode(&self, sym: ObservationSymbol) -> Result<u16> {
        if sym.public_id >= self.public {
            return Err(Error::Alphabet(format!(
                "public id {} outside alphabet of {}",
                sym.public_id, self.public
            )));
        }
        match (self.private, sym.private_id) {
            (None, None) => Ok(sym.public_id),
            (Some(n), Some(p)) if p < n => Ok(sym.public_id * n + p),
            (Some(n), Some(p)) => Err(Error::Alphabet(format!(
                "private id {p} outside alphabet of {n}"
            ))),
            (None, Some(_)) => Err(Error::Alphabet("alphabet has no private part".into())),
            (Some(_), None) => Err(Error::Alphabet("symbol lacks its private part".into())),
        }
    }

    pub fn decode(&self, index: u16) -> ObservationSymbol {
        match self.private {
            None => ObservationSymbol::public(index),
            Some(n) => ObservationSymbol::composite(index / n, index % n),
        }
    }
}

/// A history of flattened observation symbols, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObsSequence(pub Vec<u16>);

impl ObsSequence {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[u16] {
        &self.0
    }
}

impl From<Vec<u16>> for ObsSequence {
    fn from(v: Vec<u16>) -> Self {
        Self(v)
    }
}

/// Dense numbering of all histories shorter than the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceTree {
    obs: u32,
    horizon: u32,
    offsets: [u32; MAX_HORIZON + 1],
}

impl SequenceTree {
    pub fn new(obs: usize, horizon: usize) -> Result<Self> {
        if obs == 0 {
            return Err(Error::Alphabet("empty observation alphabet".into()));
        }
        if horizon > MAX_HORIZON {
            return Err(Error::Config(format!("horizon {horizon} above {MAX_HORIZON}")));
        }
        let mut offsets = [0u32; MAX_HORIZON + 1];
        let mut block: u64 = 1;
        let mut acc: u64 = 0;
        for slot in offsets.iter_mut().take(horizon + 1).skip(1) {
            acc += block;
            if acc > u32::MAX as u64 {
                return Err(Error::Config("sequence tree too large".into()));
            }
            *slot = acc as u32;
            block *= obs as u64;
        }
        Ok(Self { obs: obs as u32, horizon: horizon as u32, offsets })
    }

    pub fn obs_count(&self) -> usize {
        self.obs as usize
    }

    pub fn horizon(&self) -> usize {
        self.horizon as usize
    }

    /// Number of histories of length `0..T`.
    pub fn len(&self) -> usize {
        self.offsets[self.horizon as usize] as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn root(&self) -> SeqId {
        0
    }

    /// Ids of all histories of length `depth`.
    pub fn ids_at_depth(&self, depth: usize) -> std::ops::Range<SeqId> {
        self.offsets[depth]..self.offsets[depth + 1]
    }

    pub fn depth(&self, id: SeqId) -> usize {
        let h = self.horizon as usize;
        (0..h).find(|&d| id < self.offsets[d + 1]).unwrap_or(h)
    }

    /// History extended by one symbol, or `None` at the last decision step.
    #[inline]
    pub fn child(&self, id: SeqId, symbol: u16) -> Option<SeqId> {
        let d = self.depth(id);
        if d + 1 >= self.horizon as usize {
            return None;
        }
        let num = id - self.offsets[d];
        Some(self.offsets[d + 1] + num * self.obs + symbol as u32)
    }

    /// Child id when the depth is already known; skips the depth search.
    #[inline]
    pub fn child_at(&self, id: SeqId, depth: usize, symbol: u16) -> SeqId {
        let num = id - self.offsets[depth];
        self.offsets[depth + 1] + num * self.obs + symbol as u32
    }

    pub fn id(&self, seq: &ObsSequence) -> Result<SeqId> {
        let l = seq.len();
        if l >= self.horizon as usize {
            return Err(Error::HorizonExceeded { len: l, horizon: self.horizon as usize });
        }
        let mut num: u32 = 0;
        for &s in seq.symbols() {
            if s as u32 >= self.obs {
                return Err(Error::Alphabet(format!("symbol {s} outside alphabet of {}", self.obs)));
            }
            num = num * self.obs + s as u32;
        }
        Ok(self.offsets[l] + num)
    }

    pub fn sequence(&self, id: SeqId) -> ObsSequence {
        let d = self.depth(id);
        let mut num = id - self.offsets[d];
        let mut out = vec![0u16; d];
        for slot in out.iter_mut().rev() {
            *slot = (num % self.obs) as u16;
            num /= self.obs;
        }
        ObsSequence(out)
    }

    /// True when `prefix` is a prefix of `id` (or equal to it).
    pub fn is_prefix(&self, prefix: SeqId, id: SeqId) -> bool {
        let dp = self.depth(prefix);
        let d = self.depth(id);
        if dp > d {
            return false;
        }
        let mut num = id - self.offsets[d];
        for _ in dp..d {
            num /= self.obs;
        }
        self.offsets[dp] + num == prefix
    }
}

/// Replacement of the action at one history.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeighborRef {
    pub sequence: ObsSequence,
    pub seq_id: SeqId,
    pub action: ActionId,
}

/// Deterministic map from every history shorter than the horizon to an action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactivePolicy {
    tree: SequenceTree,
    action_count: u16,
    table: Vec<ActionId>,
}

impl ReactivePolicy {
    pub fn constant(tree: SequenceTree, action_count: u16, action: ActionId) -> Result<Self> {
        if action >= action_count {
            return Err(Error::Alphabet(format!("action {action} outside {action_count}")));
        }
        Ok(Self { tree, action_count, table: vec![action; tree.len()] })
    }

    pub fn from_fn(
        tree: SequenceTree,
        action_count: u16,
        mut f: impl FnMut(&ObsSequence) -> ActionId,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(tree.len());
        for id in 0..tree.len() as SeqId {
            let a = f(&tree.sequence(id));
            if a >= action_count {
                return Err(Error::Alphabet(format!("action {a} outside {action_count}")));
            }
            table.push(a);
        }
        Ok(Self { tree, action_count, table })
    }

    pub fn from_table(tree: SequenceTree, action_count: u16, table: Vec<ActionId>) -> Result<Self> {
        if table.len() != tree.len() {
            return Err(Error::Config(format!(
                "table has {} entries, tree has {}",
                table.len(),
                tree.len()
            )));
        }
        if let Some(&a) = table.iter().find(|&&a| a >= action_count) {
            return Err(Error::Alphabet(format!("action {a} outside {action_count}")));
        }
        Ok(Self { tree, action_count, table })
    }

    pub fn random(tree: SequenceTree, action_count: u16, rng: &mut impl Rng) -> Self {
        let table = (0..tree.len()).map(|_| rng.gen_range(0..action_count)).collect();
        Self { tree, action_count, table }
    }

    pub fn tree(&self) -> &SequenceTree {
        &self.tree
    }

    pub fn action_count(&self) -> u16 {
        self.action_count
    }

    pub fn table(&self) -> &[ActionId] {
        &self.table
    }

    #[inline]
    pub fn action(&self, id: SeqId) -> ActionId {
        self.table[id as usize]
    }

    pub fn act(&self, history: &ObsSequence) -> Result<ActionId> {
        Ok(self.table[self.tree.id(history)? as usize])
    }

    pub fn transform(&self, seq: &ObsSequence, action: ActionId) -> Result<Self> {
        let id = self.tree.id(seq)?;
        self.transform_id(id, action)
    }

    pub fn transform_id(&self, id: SeqId, action: ActionId) -> Result<Self> {
        if action >= self.action_count {
            return Err(Error::Alphabet(format!("action {action} outside {}", self.action_count)));
        }
        if id as usize >= self.table.len() {
            return Err(Error::Alphabet(format!("unknown sequence id {id}")));
        }
        let mut out = self.clone();
        out.table[id as usize] = action;
        Ok(out)
    }

    /// In-place variant used by learners once a transform is accepted.
    pub fn set(&mut self, id: SeqId, action: ActionId) {
        self.table[id as usize] = action;
    }

    pub fn neighbors(&self) -> Vec<NeighborRef> {
        let mut out = Vec::with_capacity(self.table.len() * (self.action_count as usize).saturating_sub(1));
        for id in 0..self.table.len() as SeqId {
            let seq = self.tree.sequence(id);
            for a in 0..self.action_count {
                if a != self.table[id as usize] {
                    out.push(NeighborRef { sequence: seq.clone(), seq_id: id, action: a });
                }
            }
        }
        out
    }

    /// Number of entries where the two policies differ.
    pub fn diff_count(&self, other: &Self) -> usize {
        self.table.iter().zip(&other.table).filter(|(a, b)| a != b).count()
    }

    pub fn view(&self) -> PolicyView<'_> {
        PolicyView { base: self, overlay: None }
    }

    pub fn view_with(&self, id: SeqId, action: ActionId) -> PolicyView<'_> {
        PolicyView { base: self, overlay: Some((id, action)) }
    }
}

/// A policy with at most one entry replaced, without copying the table.
#[derive(Clone, Copy, Debug)]
pub struct PolicyView<'a> {
    pub base: &'a ReactivePolicy,
    pub overlay: Option<(SeqId, ActionId)>,
}

impl PolicyView<'_> {
    #[inline]
    pub fn act(&self, id: SeqId) -> ActionId {
        match self.overlay {
            Some((o, a)) if o == id => a,
            _ => self.base.action(id),
        }
    }

    pub fn tree(&self) -> &SequenceTree {
        self.base.tree()
    }

    pub fn to_policy(&self) -> ReactivePolicy {
        match self.overlay {
            Some((id, a)) => {
                let mut p = self.base.clone();
                p.set(id, a);
                p
            }
            None => self.base.clone(),
        }
    }
}

/// One agent's record of a `T`-step episode.
///
/// `observations[t]` is the symbol received before acting at step `t`;
/// `observations[0]` is `None`. The symbol emitted after the final action is
/// kept separately in `terminal_observation`, and `histories[t]` caches the id
/// of the history the agent acted on at step `t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
    pub observations: Vec<Option<u16>>,
    pub terminal_observation: Option<u16>,
    pub histories: Vec<SeqId>,
}

impl Trajectory {
    pub fn clear(&mut self) {
        self.actions.clear();
        self.rewards.clear();
        self.observations.clear();
        self.terminal_observation = None;
        self.histories.clear();
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Observations received so far, excluding the null slot.
    pub fn history(&self, len: usize) -> ObsSequence {
        ObsSequence(self.observations.iter().skip(1).take(len).map(|o| o.unwrap_or(0)).collect())
    }

    /// Whether the first `seq.len()` observations equal `seq`.
    pub fn realizes(&self, seq: &ObsSequence) -> bool {
        let l = seq.len();
        if l >= self.observations.len() {
            return false;
        }
        seq.symbols().iter().enumerate().all(|(i, &s)| self.observations[i + 1] == Some(s))
    }
}

pub fn transform_policy(policy: &ReactivePolicy, seq: &ObsSequence, action: ActionId) -> Result<ReactivePolicy> {
    policy.transform(seq, action)
}

pub fn enumerate_neighbors(policy: &ReactivePolicy) -> Vec<NeighborRef> {
    policy.neighbors()
}

pub fn act(policy: &ReactivePolicy, history: &ObsSequence) -> Result<ActionId> {
    policy.act(history)
}

/// Closed-form neighborhood size `|A|·(|Ω|^T − 1)/(|Ω| − 1) − 1`.
///
/// This counts every (history, action) pair, including the incumbent action,
/// less one for the policy itself; it is not the number of single-entry
/// neighbors, which is `(|A| − 1)` per history. A single-symbol alphabet uses
/// `T·(|A| − 1)`.
pub fn neighborhood_formula(action_count: u64, obs_count: u64, horizon: u32) -> u64 {
    if obs_count <= 1 {
        return horizon as u64 * action_count.saturating_sub(1);
    }
    let series = (obs_count.pow(horizon) - 1) / (obs_count - 1);
    (action_count * series).saturating_sub(1)
}

/// Sum of rewards from step `len(seq)` on, or `None` when the trajectory's
/// history does not start with `seq`.
pub fn post_sequence_reward(traj: &Trajectory, seq: &ObsSequence) -> Option<f64> {
    if !traj.realizes(seq) {
        return None;
    }
    Some(traj.rewards[seq.len()..].iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiger_tree() -> SequenceTree {
        SequenceTree::new(6, 3).unwrap()
    }

    #[test]
    fn tree_sizes() {
        assert_eq!(tiger_tree().len(), 43);
        assert_eq!(SequenceTree::new(2, 3).unwrap().len(), 7);
        assert_eq!(SequenceTree::new(1, 4).unwrap().len(), 4);
    }

    #[test]
    fn ids_roundtrip() {
        let t = tiger_tree();
        for id in 0..t.len() as SeqId {
            let s = t.sequence(id);
            assert_eq!(t.id(&s).unwrap(), id);
            assert_eq!(t.depth(id), s.len());
        }
    }

    #[test]
    fn child_matches_sequence_append() {
        let t = tiger_tree();
        let parent = ObsSequence(vec![4]);
        let pid = t.id(&parent).unwrap();
        let cid = t.child(pid, 2).unwrap();
        assert_eq!(t.sequence(cid), ObsSequence(vec![4, 2]));
        assert_eq!(t.child(cid, 0), None);
        assert!(t.is_prefix(pid, cid));
        assert!(!t.is_prefix(cid, pid));
    }

    #[test]
    fn alphabet_flattening() {
        let a = Alphabet::with_private(2, 3);
        assert_eq!(a.size(), 6);
        let s = ObservationSymbol::composite(1, 2);
        let idx = a.encode(s).unwrap();
        assert_eq!(idx, 5);
        assert_eq!(a.decode(idx), s);
        assert!(a.encode(ObservationSymbol::public(1)).is_err());
        assert!(a.encode(ObservationSymbol::composite(2, 0)).is_err());
    }

    #[test]
    fn transform_replaces_one_entry() {
        let t = tiger_tree();
        let p = ReactivePolicy::constant(t, 3, 0).unwrap();
        let seq = ObsSequence(vec![1, 5]);
        let q = p.transform(&seq, 2).unwrap();
        assert_eq!(p.diff_count(&q), 1);
        assert_eq!(q.act(&seq).unwrap(), 2);
        // all seven shorter histories untouched
        for id in 0..7 {
            assert_eq!(q.action(id), 0);
        }
        assert_eq!(p.transform(&ObsSequence::empty(), 0).unwrap(), p);
    }

    #[test]
    fn transform_rejects_bad_inputs() {
        let p = ReactivePolicy::constant(tiger_tree(), 3, 0).unwrap();
        assert!(p.transform(&ObsSequence(vec![0]), 3).is_err());
        assert!(p.transform(&ObsSequence(vec![7]), 1).is_err());
        assert!(matches!(
            p.act(&ObsSequence(vec![0, 0, 0])),
            Err(Error::HorizonExceeded { len: 3, horizon: 3 })
        ));
    }

    #[test]
    fn neighbor_counts_are_constructive() {
        let single = ReactivePolicy::constant(SequenceTree::new(2, 3).unwrap(), 3, 0).unwrap();
        assert_eq!(single.neighbors().len(), 14);
        let multi = ReactivePolicy::constant(tiger_tree(), 3, 0).unwrap();
        assert_eq!(multi.neighbors().len(), 86);
        let mono = ReactivePolicy::constant(tiger_tree(), 1, 0).unwrap();
        assert!(mono.neighbors().is_empty());
    }

    #[test]
    fn formula_values() {
        assert_eq!(neighborhood_formula(3, 2, 3), 20);
        assert_eq!(neighborhood_formula(3, 6, 3), 128);
        assert_eq!(neighborhood_formula(3, 12, 3), 470);
        assert_eq!(neighborhood_formula(7, 9, 3), 636);
        assert_eq!(neighborhood_formula(3, 1, 3), 6);
    }

    #[test]
    fn post_reward_tail_sum() {
        let traj = Trajectory {
            actions: vec![0, 0, 0],
            rewards: vec![-1.0, -1.0, 10.0],
            observations: vec![None, Some(3), Some(1)],
            terminal_observation: Some(0),
            histories: vec![],
        };
        assert_eq!(post_sequence_reward(&traj, &ObsSequence::empty()), Some(8.0));
        assert_eq!(post_sequence_reward(&traj, &ObsSequence(vec![3])), Some(9.0));
        assert_eq!(post_sequence_reward(&traj, &ObsSequence(vec![3, 1])), Some(10.0));
        assert_eq!(post_sequence_reward(&traj, &ObsSequence(vec![2])), None);
    }
}
