//! Regret-bounded pruning of rarely visited histories.
//!
//! A history `ō` reached with probability `Pr(ō)` can cost at most
//! `Pr(ō)(T − len ō)(R_max − R_min)` if its action is left unimproved. The
//! ledger estimates `Pr(ō)` from visit frequencies and prunes histories while
//! the summed regret, normalized by `T(R_max − R_min)`, stays within `φ`.

use serde::{Deserialize, Serialize};

use crate::policy::{SeqId, SequenceTree};

/// `Pr(ō)(T − len)(R_max − R_min)`.
pub fn regret_bound(prob: f64, seq_len: usize, horizon: usize, r_min: f64, r_max: f64) -> f64 {
    debug_assert!(seq_len < horizon);
    prob * (horizon - seq_len) as f64 * (r_max - r_min)
}

/// Regret as a share of the largest possible loss `T(R_max − R_min)`.
pub fn normalized_regret(prob: f64, seq_len: usize, horizon: usize) -> f64 {
    prob * (horizon - seq_len) as f64 / horizon as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneOrder {
    /// Test a history when the scheduler draws it.
    #[default]
    Random,
    /// Prune in ascending order of regret until the budget is spent.
    Greedy,
}

/// How `Pr(ō)` is estimated from counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Visits of `ō` over trajectories: the probability of reaching `ō`.
    #[default]
    Trajectory,
    /// Visits of `ō` over visits summed across all histories. At horizon
    /// `T` each trajectory visits `T` histories, so this is the trajectory
    /// estimate divided by `T`.
    Visit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub phi: f64,
    /// Trajectories observed before anything may be pruned.
    pub warmup: u64,
    pub order: PruneOrder,
    /// Lower bound applied to probability estimates; 0 for the literal rule.
    pub min_probability: f64,
    #[serde(default)]
    pub estimator: Estimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    tree: SequenceTree,
    config: PruneConfig,
    pruned: Vec<bool>,
    pruned_order: Vec<SeqId>,
    seq_counts: Vec<u64>,
    total_trajectories: u64,
    total_visits: u64,
}

/// A pruned history and its regret share at the time of the snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunedEntry {
    pub seq_id: SeqId,
    pub sequence: Vec<u16>,
    pub probability: f64,
    pub regret_share: f64,
}

impl RegretLedger {
    pub fn new(tree: SequenceTree, config: PruneConfig) -> Self {
        let n = tree.len();
        Self {
            tree,
            config,
            pruned: vec![false; n],
            pruned_order: Vec::new(),
            seq_counts: vec![0; n],
            total_trajectories: 0,
            total_visits: 0,
        }
    }

    pub fn config(&self) -> &PruneConfig {
        &self.config
    }

    pub fn total_trajectories(&self) -> u64 {
        self.total_trajectories
    }

    pub fn warmed_up(&self) -> bool {
        self.total_trajectories >= self.config.warmup
    }

    /// Count the histories one trajectory passed through.
    pub fn record(&mut self, histories: &[SeqId]) {
        self.total_trajectories += 1;
        self.total_visits += histories.len() as u64;
        for &h in histories {
            self.seq_counts[h as usize] += 1;
        }
    }

    /// Empirical `Pr(ō)`; 0 before any trajectory.
    pub fn estimate_seq_probability(&self, seq: SeqId) -> f64 {
        let total = match self.config.estimator {
            Estimator::Trajectory => self.total_trajectories,
            Estimator::Visit => self.total_visits,
        };
        if total == 0 {
            return 0.0;
        }
        self.seq_counts[seq as usize] as f64 / total as f64
    }

    fn share(&self, seq: SeqId) -> f64 {
        let p = self.estimate_seq_probability(seq).max(self.config.min_probability);
        normalized_regret(p, self.tree.depth(seq), self.tree.horizon())
    }

    /// Summed normalized regret of the pruned set under current estimates.
    pub fn cumulative_regret(&self) -> f64 {
        self.pruned_order.iter().map(|&s| self.share(s)).sum()
    }

    pub fn is_pruned(&self, seq: SeqId) -> bool {
        self.pruned[seq as usize]
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned_order.len()
    }

    pub fn unpruned_count(&self) -> usize {
        self.pruned.len() - self.pruned_order.len()
    }

    pub fn pruned_ids(&self) -> &[SeqId] {
        &self.pruned_order
    }

    /// Prune `seq` if warmup is met and the budget allows it.
    pub fn maybe_prune(&mut self, seq: SeqId) -> bool {
        if self.pruned[seq as usize] || !self.warmed_up() {
            return false;
        }
        let total = self.cumulative_regret() + self.share(seq);
        if total <= self.config.phi {
            self.pruned[seq as usize] = true;
            self.pruned_order.push(seq);
            debug_assert!(self.cumulative_regret() <= self.config.phi + 1e-12);
            true
        } else {
            false
        }
    }

    /// Greedy fill: prune histories in ascending regret order while the
    /// budget allows. Returns how many were added.
    pub fn prune_greedy(&mut self) -> usize {
        if !self.warmed_up() {
            return 0;
        }
        let mut order: Vec<SeqId> =
            (0..self.pruned.len() as SeqId).filter(|&s| !self.pruned[s as usize]).collect();
        order.sort_by(|&a, &b| self.share(a).total_cmp(&self.share(b)).then(a.cmp(&b)));
        let mut used = self.cumulative_regret();
        let mut added = 0;
        for s in order {
            let r = self.share(s);
            if used + r > self.config.phi {
                break;
            }
            used += r;
            self.pruned[s as usize] = true;
            self.pruned_order.push(s);
            added += 1;
        }
        added
    }

    /// Whether the scheduler may use `seq`. Under the random order this is
    /// where a drawn history gets its pruning test.
    pub fn scheduler_filter(&mut self, seq: SeqId) -> bool {
        if self.config.order == PruneOrder::Random {
            self.maybe_prune(seq);
        }
        !self.pruned[seq as usize]
    }

    pub fn snapshot(&self) -> Vec<PrunedEntry> {
        self.pruned_order
            .iter()
            .map(|&s| PrunedEntry {
                seq_id: s,
                sequence: self.tree.sequence(s).0,
                probability: self.estimate_seq_probability(s),
                regret_share: self.share(s),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(phi: f64, warmup: u64) -> RegretLedger {
        let tree = SequenceTree::new(2, 3).unwrap();
        RegretLedger::new(
            tree,
            PruneConfig { phi, warmup, order: PruneOrder::Random, min_probability: 0.0, estimator: Estimator::Trajectory },
        )
    }

    #[test]
    fn regret_arithmetic() {
        assert_eq!(regret_bound(0.0, 1, 3, -105.0, 60.0), 0.0);
        assert!((regret_bound(0.1, 1, 3, -105.0, 60.0) - 33.0).abs() < 1e-12);
        assert!((33.0 / 495.0 - normalized_regret(0.1, 1, 3)).abs() < 1e-12);
        assert_eq!(regret_bound(1.0, 2, 3, 0.0, 1.0), 1.0);
    }

    #[test]
    fn frequencies() {
        let mut l = ledger(0.1, 0);
        assert_eq!(l.estimate_seq_probability(3), 0.0);
        for i in 0..100 {
            let leaf = if i < 10 { 3 } else { 4 };
            l.record(&[0, 1, leaf]);
        }
        assert!((l.estimate_seq_probability(3) - 0.1).abs() < 1e-12);
        assert_eq!(l.estimate_seq_probability(5), 0.0);
    }

    #[test]
    fn visit_estimate_divides_by_path_length() {
        let mut l = ledger(0.1, 0);
        l.config.estimator = Estimator::Visit;
        for i in 0..100 {
            l.record(&[0, 1, if i < 10 { 3 } else { 4 }]);
        }
        assert!((l.estimate_seq_probability(3) - 0.1 / 3.0).abs() < 1e-12);
        assert!((l.estimate_seq_probability(0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_blocks_then_budget_limits() {
        let mut l = ledger(0.1, 10);
        for _ in 0..9 {
            l.record(&[0, 1, 3]);
        }
        assert!(!l.maybe_prune(6));
        l.record(&[0, 2, 5]);
        // unseen history costs nothing
        assert!(l.maybe_prune(6));
        // 0.1 · (1/3) fits, then 0.9 · (2/3) does not
        assert!(l.maybe_prune(5));
        assert!(!l.maybe_prune(1));
        assert!(l.cumulative_regret() <= 0.1);
        assert!(!l.scheduler_filter(6));
        assert!(l.scheduler_filter(0));
    }

    #[test]
    fn zero_budget_keeps_visited_histories() {
        let mut l = ledger(0.0, 0);
        l.record(&[0, 1, 3]);
        assert!(!l.maybe_prune(1));
        assert!(!l.maybe_prune(3));
        assert!(l.maybe_prune(4));
    }

    #[test]
    fn greedy_fill() {
        let mut l = ledger(0.2, 0);
        l.order_greedy_for_test();
        for i in 0..10 {
            l.record(&[0, if i < 3 { 1 } else { 2 }, if i < 3 { 3 } else { 5 }]);
        }
        let added = l.prune_greedy();
        // shares: two unseen at 0, then 0.1; the next (0.2) would overflow
        assert_eq!(added, 3);
        assert!(l.cumulative_regret() <= 0.2);
        assert!(!l.is_pruned(0));
    }

    impl RegretLedger {
        fn order_greedy_for_test(&mut self) {
            self.config.order = PruneOrder::Greedy;
        }
    }
}
