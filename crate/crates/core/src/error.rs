use thiserror::Error;

use crate::expr::ExprError;

/// Errors raised by the numerical kernels and group machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("non-finite evaluation while differentiating along {coordinate}")]
    Differentiation { coordinate: &'static str },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("singular jacobian in generating-function solve")]
    SingularJacobian,

    #[error("implicit stage did not converge at step {step} (residual {residual:e})")]
    StageDivergence { step: usize, residual: f64 },

    #[error("non-finite state after step {last_valid}")]
    NonFiniteState { last_valid: usize },

    #[error("boost speed {speed} is not below c = {c}")]
    BoostDomain { speed: f64, c: f64 },

    #[error("sector `{sector}` has no momentum map under lift {kind}")]
    UnsupportedSector { sector: &'static str, kind: String },

    #[error("lift {kind} is not available here: {reason}")]
    InvalidLift { kind: String, reason: &'static str },

    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type Result<T> = std::result::Result<T, Error>;
