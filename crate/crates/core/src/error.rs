use thiserror::Error;

/// Errors produced by the overlap machinery, the optimizer and scenario handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("means coincide; the separating hyperplane is undefined")]
    DegenerateMeans,

    #[error("separator normal is zero")]
    DegenerateSeparator,

    #[error("overlap parameter search did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("linearization failed: {0}")]
    Linearization(String),

    #[error("quadratic program infeasible (max violation {max_violation:e})")]
    QpInfeasible { max_violation: f64 },

    #[error("quadratic program solver failed: {0}")]
    QpFailure(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
