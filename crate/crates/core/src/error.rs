use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with inputs that violate its preconditions.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("tensor {0} was not recorded on this tape")]
    MissingProvenance(String),

    #[error("finite-difference oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("cannot parse {what} {text:?}: {reason}")]
    Parse {
        what: &'static str,
        text: String,
        reason: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing required column {0:?}")]
    MissingColumn(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("source {0:?} has degenerate targets (zero variance or fewer than two records)")]
    DegenerateSource(String),

    #[error("task {task:?} has {have} training records, need at least {need}")]
    UndersizedTask {
        task: String,
        have: usize,
        need: usize,
    },

    #[error("{0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingColumn(_) | Error::Format(_) | Error::Csv(_) | Error::Config(_) => 2,
            Error::UndersizedTask { .. } => 3,
            Error::Checkpoint(_) => 4,
            Error::Validation(_) | Error::Parse { .. } => 5,
            _ => 1,
        }
    }
}
