use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MasqError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("simulation fault: {0}")]
    SimulationFault(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MasqError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MasqError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        MasqError::Dimension {
            context,
            expected,
            got,
        }
    }
}

pub type Result<T> = std::result::Result<T, MasqError>;
