use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("initial-state sampler rejected {attempts} candidates; obstacles may fill the state box")]
    SamplerExhausted { attempts: usize },

    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:.3e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("Riccati step {step} is ill-conditioned (R + BᵀPB not invertible)")]
    IllConditioned { step: usize },

    #[error("training diverged at update {update}: {reason}")]
    Diverged { update: usize, reason: String },

    #[error("only {found} of {wanted} initial states found within {budget} candidates")]
    InsufficientYield {
        wanted: usize,
        found: usize,
        budget: usize,
    },

    #[error("invalid file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
