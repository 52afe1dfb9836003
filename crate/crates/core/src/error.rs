use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("input {value} lies outside the chebyshev domain [-1, 1]")]
    Domain { value: f64 },

    #[error("every eigenvalue beyond index 0 fell below the floor {floor:e}")]
    EigenvalueUnderflow { floor: f64 },

    #[error("eigenfunction evaluation overflowed at x = {x}")]
    Overflow { x: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite even with diagonal jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("hyperparameter `{0}` does not belong to this model")]
    UnknownParameter(String),

    #[error("hyperparameter `{0}` appears in the eigenfunctions; the eigenvalue-only path does not apply")]
    NotEigenvalueOnly(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("problem too large for the dense path: {what} = {size} exceeds the limit {limit}")]
    SizeGuard { what: &'static str, size: usize, limit: usize },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
