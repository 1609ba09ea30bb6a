use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("alphabet error: {0}")]
    Alphabet(String),

    #[error("history of length {len} exceeds horizon {horizon}")]
    HorizonExceeded { len: usize, horizon: usize },

    #[error("stage index must be at least 1")]
    ZeroStage,

    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("enumeration refused: outcome tree exceeds {cap} nodes")]
    EnumerationRefused { cap: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}
