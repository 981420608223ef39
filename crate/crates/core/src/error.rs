use thiserror::Error;

use crate::model::Diagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{what} is not positive definite at step {step} (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite {
        what: &'static str,
        step: usize,
        min_eigenvalue: f64,
    },

    #[error("{what} is not positive semidefinite at step {step} (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite {
        what: &'static str,
        step: usize,
        min_eigenvalue: f64,
    },

    #[error("non-finite entries in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("Riccati iteration diverged after {iterations} iterations (iterate norm {norm:.3e})")]
    Divergence { iterations: usize, norm: f64 },

    #[error("Riccati iteration did not converge in {iterations} iterations (relative change {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("model is not admissible: {0}")]
    InvalidModel(Diagnostics),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
