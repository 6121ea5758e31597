use std::path::PathBuf;

use thiserror::Error;

use crate::trainer::MetricsRecord;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] nlprompt_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding header: {0}")]
    MalformedHeader(String),
    #[error("truncated embedding file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("checksum mismatch: header {expected:016x}, payload {actual:016x}")]
    Checksum { expected: u64, actual: u64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        records: Vec<MetricsRecord>,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("replay mismatch in {0}")]
    ReplayMismatch(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
