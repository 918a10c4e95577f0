use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: invalid JSON: {message}")]
    InvalidJson { line: usize, message: String },

    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },

    #[error("mask sentinel {sentinel:?} occurs verbatim in snippet {snippet_id}")]
    SentinelInSource {
        snippet_id: String,
        sentinel: String,
    },

    #[error("snippet {snippet_id}: cannot mask {requested} tokens, only {available} leaf tokens")]
    NotEnoughTokens {
        snippet_id: String,
        requested: usize,
        available: usize,
    },

    #[error("effective corpus is empty")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),

    #[error("causal estimation: {0}")]
    Estimation(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// Process exit code: 2 when the model backend is unreachable, 3 for an
    /// empty corpus, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend(e) if e.is_unreachable() => 2,
            Error::EmptyCorpus => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Serialization(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Serialization(err.to_string())
    }
}
