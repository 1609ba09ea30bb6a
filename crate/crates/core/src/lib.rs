//! Model-free Monte Carlo exploring-starts policy search for partially
//! observable multiagent problems.
//!
//! The crate covers three learners over reactive (history-indexed) policies:
//! [`mcesp`] for a subject agent facing a fixed opponent, [`mcesip`] which
//! additionally bins samples by a predicted opponent action sequence, and
//! [`mcesmp`] for a centrally controlled team. [`pac`] holds the sample
//! bounds, [`pruning`] the regret-bounded removal of rare histories,
//! [`domains`] the benchmark simulators and [`oracle`] exact evaluation by
//! enumeration.

pub mod cropfield;
pub mod domains;
pub mod error;
pub mod mcesip;
pub mod mcesmp;
pub mod mcesp;
pub mod oracle;
pub mod pac;
pub mod policy;
pub mod pruning;
pub mod qtable;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use domains::{DomainSpec, OpponentExecutor};
pub use policy::{
    ActionId, Alphabet, NeighborRef, ObsSequence, ObservationSymbol, PolicyView, ReactivePolicy,
    SeqId, SequenceTree, Trajectory,
};
pub use sim::Simulator;

/// Double precision PAC configuration.
pub type PacConfig = pac::PacConfig<f64>;
/// Double precision Λ bound.
pub type LambdaBound = pac::LambdaBound<f64>;
/// Double precision stage schedule.
pub type PacSchedule = pac::PacSchedule<f64>;
/// Double precision comparison threshold.
pub type Threshold = pac::Threshold<f64>;
/// Double precision bound bundle.
pub type Bounds = pac::Bounds<f64>;
/// Double precision Q table.
pub type QTable = qtable::QTable<f64>;
/// Single precision Q table, for memory-bound sweeps.
pub type QTable32 = qtable::QTable<f32>;
