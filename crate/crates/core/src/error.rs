use thiserror::Error;

use crate::conic::ConicError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {have} observations per user, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("region solve failed: {0}")]
    Solver(#[from] ConicError),

    #[error("constraint family {family} violated by {violation:e} (tolerance {tolerance:e})")]
    ConstraintViolation {
        family: &'static str,
        violation: f64,
        tolerance: f64,
    },

    #[error("degenerate region: user {user} has optimal rate {rate:e}")]
    DegenerateRegion { user: usize, rate: f64 },

    #[error("weight update forbidden: gap {gap:e} does not exceed epsilon {epsilon:e}")]
    UpdateForbidden { gap: f64, epsilon: f64 },

    #[error("quadrature did not converge (error estimate {estimate:e})")]
    Quadrature { estimate: f64 },

    #[error("unknown user id {0}")]
    UnknownUser(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
