use thiserror::Error;

/// Errors raised by the optimizer and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnesError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A diagonal entry of the Cholesky factor is zero, negative or not finite.
    #[error("singular Cholesky factor: diagonal entry {index} is {value}")]
    SingularFactor { index: usize, value: f64 },

    /// The Fisher-inverse recurrence hit a non-positive Schur complement at block `k`.
    #[error("numerical breakdown in Fisher inverse recurrence at block {k}")]
    NumericalBreakdown { k: usize },

    /// The objective produced NaN for the individual at `index`.
    #[error("objective returned NaN for individual {index}")]
    InvalidFitness { index: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = EnesError> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(EnesError::DimensionMismatch { expected, actual })
    }
}
