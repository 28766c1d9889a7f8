use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Cholesky factorisation failed for {what} (covariance not positive definite)")]
    CholeskyFailure { what: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class {class} has no (or too few) members")]
    EmptyClass { class: usize },
    #[error("empty data")]
    EmptyData,
    #[error("degenerate missingness channel at row {row}: alpha + (1 - alpha) q = 0")]
    DegenerateChannel { row: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("logistic fit failed: {0}")]
    LogisticFit(String),
    #[error("unsupported covariance structure: {0}")]
    UnsupportedStructure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
