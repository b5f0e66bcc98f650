use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node count must be at least 2, got {0}")]
    TooFewNodes(usize),

    #[error("edge probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),

    #[error("exhaustive enumeration supports at most {max} nodes, got {n}")]
    EnumerationTooLarge { n: usize, max: usize },

    #[error("dense Kronecker moment matrix supports at most {max} nodes, got {n}")]
    DenseTooLarge { n: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),

    #[error("step budget must be at least 1")]
    ZeroStepBudget,

    #[error("replication count must be at least 1")]
    ZeroReplications,

    #[error("consensus not reached after {steps} steps (spread {spread:e})")]
    NotConverged { steps: u64, spread: f64 },

    #[error("{count} of {reps} replications did not converge (first indices: {first:?})")]
    EnsembleNotConverged {
        count: usize,
        reps: usize,
        first: Vec<usize>,
    },

    #[error("power iteration stalled after {iterations} iterations (residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("invalid initial condition: {0}")]
    InvalidInitialCondition(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
