use thiserror::Error;

/// Errors raised by the solvers and estimators in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid box: lower[{index}] = {lower} > upper[{index}] = {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
    #[error("semismooth solver did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error("active-set linear system is singular (pattern {pattern})")]
    SingularPattern { pattern: String },
    #[error("enumeration over {patterns} active-set patterns exceeds the limit of {limit}")]
    DimensionTooLarge { patterns: u128, limit: u128 },
    #[error("subproblem has {count} distinct solutions; the Newton step is not unique")]
    NonUnique { count: usize },
    #[error("iteration diverged: |z| = {norm:e}")]
    Diverged { norm: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got, context })
    }
}
