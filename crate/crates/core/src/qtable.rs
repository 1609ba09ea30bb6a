use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionId, SeqId};
use crate::scalar::Scalar;

/// Running average and its sample count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Entry<S> {
    pub q: S,
    pub count: u64,
}

impl<S: Scalar> Entry<S> {
    /// `Q ← (1 − α)Q + αr` with `α = 1/(c + 1)`, written as `Q + α(r − Q)` so
    /// a constant stream stays exact.
    pub fn update(&mut self, reward: S) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::NonFiniteReward(reward.as_f64()));
        }
        let alpha = S::one() / S::of_u64(self.count + 1);
        self.q = self.q + alpha * (reward - self.q);
        self.count += 1;
        Ok(())
    }
}

/// Empirical action values keyed by (history, action), stored densely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable<S> {
    actions: usize,
    entries: Vec<Entry<S>>,
}

impl<S: Scalar> QTable<S> {
    pub fn new(sequences: usize, actions: usize) -> Self {
        Self { actions, entries: vec![Entry::default(); sequences * actions] }
    }

    #[inline]
    fn slot(&self, seq: SeqId, action: ActionId) -> usize {
        seq as usize * self.actions + action as usize
    }

    pub fn get(&self, seq: SeqId, action: ActionId) -> Entry<S> {
        self.entries[self.slot(seq, action)]
    }

    pub fn q(&self, seq: SeqId, action: ActionId) -> S {
        self.get(seq, action).q
    }

    pub fn count(&self, seq: SeqId, action: ActionId) -> u64 {
        self.get(seq, action).count
    }

    pub fn update(&mut self, seq: SeqId, action: ActionId, reward: S) -> Result<Entry<S>> {
        let i = self.slot(seq, action);
        self.entries[i].update(reward)?;
        Ok(self.entries[i])
    }

    /// Zero all values and counts.
    pub fn reset(&mut self) {
        self.entries.iter_mut().for_each(|e| *e = Entry::default());
    }

    pub fn actions(&self) -> usize {
        self.actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_average() {
        let mut t = QTable::<f64>::new(1, 2);
        let e = t.update(0, 1, 5.0).unwrap();
        assert_eq!((e.q, e.count), (5.0, 1));
        let e = t.update(0, 1, 3.0).unwrap();
        assert_eq!((e.q, e.count), (4.0, 2));
        assert!(t.update(0, 1, f64::NAN).is_err());
        assert_eq!(t.count(0, 1), 2);
        t.reset();
        assert_eq!(t.get(0, 1), Entry::default());
    }

    #[test]
    fn constant_stream_is_exact() {
        let mut e = Entry::<f64>::default();
        for _ in 0..1000 {
            e.update(0.1).unwrap();
        }
        assert_eq!(e.q, 0.1);
    }
}
