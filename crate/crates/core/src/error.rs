use std::path::PathBuf;

use crate::homomorphism::ModelParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or settings that cannot work together (bad layer wiring, invalid config values).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called in a state or with arguments its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file did not match its expected binary or text layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A checkpoint, dataset or abstract-MDP file belongs to a different run.
    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Divergence {
        epoch: usize,
        batch: usize,
        message: String,
        last_good: Option<Box<ModelParams>>,
    },

    #[error("environment failure in trajectory {trajectory}: {source}")]
    Rollout {
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, message: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Validation problems are the caller's fault and map to exit code 1;
    /// everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Usage(_) | Error::Stale(_))
    }
}
