use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix or vector has a non-finite entry")]
    NonFinite,

    #[error("matrix dimension {0} outside the supported range 1..=64")]
    UnsupportedSize(usize),

    /// `P_k^{-1} - F_k` is not positive definite, so the cost has no unique minimizer.
    #[error("ill-posed forgetting at step {step}: min eigenvalue of P^-1 - F is {margin:e}")]
    IllPosedForgetting { step: usize, margin: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("empty regressor sequence")]
    EmptySequence,

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("missing condition: {0}")]
    MissingCondition(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("strategy memory out of sequence: expected step {expected}, got {got}")]
    OutOfSequence { expected: usize, got: usize },
}
