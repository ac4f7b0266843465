use thiserror::Error;

/// Errors produced by the core algorithms.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid variance: {0} (must be > 0)")]
    InvalidVariance(f64),

    #[error("spectrum is empty")]
    EmptySpectrum,

    #[error("numerical failure at iteration {iteration}: {detail}")]
    NumericalFailure { iteration: usize, detail: String },

    #[error("covariance construction failed: {0}")]
    CovarianceConstruction(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
