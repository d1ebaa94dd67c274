use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    Dimension {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {key}: {constraint}")]
    Config { key: String, constraint: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("training did not converge: {0}")]
    Convergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn config(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            constraint: constraint.into(),
        }
    }
}
