use thiserror::Error;

/// Errors raised by the model, assumption, certificate, operator, semigroup
/// and SDE layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite evaluation of {what} at v = {point:?}")]
    NonFinite { what: String, point: Vec<f64> },

    #[error("ellipticity violated at v = {point:?}: pivot {pivot} = {value:e}")]
    Ellipticity {
        point: Vec<f64>,
        pivot: usize,
        value: f64,
    },

    #[error("assumption {condition} fails at witness {witness:?}: {detail}")]
    AssumptionFailure {
        condition: String,
        witness: Vec<f64>,
        detail: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("certificate inconsistency: {0}")]
    CertificateInconsistency(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("linear solve failed after {iterations} refinement steps (relative residual {residual:e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("SDE blow-up on path {path} at t = {time}")]
    BlowUp { path: usize, time: f64 },

    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
