use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("sink node {sink} unreachable from source {from}")]
    Unreachable { from: usize, sink: usize },

    #[error("factorial reformulation refused: m = {m} exceeds limit {limit} ({constraints} permutation constraints)")]
    CapacityExceeded {
        m: usize,
        limit: usize,
        constraints: usize,
    },

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("not a doubly stochastic matrix: {0}")]
    NotBistochastic(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
