use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {what} `{name}`")]
    UnknownKind { what: &'static str, name: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for {n} states")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("coverage violation: {0}")]
    Coverage(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("forecaster `{0}` has not been trained")]
    Untrained(String),

    #[error("predictive member {id}: {source}")]
    Member {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("vehicle {vehicle}: infeasible plan: {reason}")]
    Infeasible { vehicle: usize, reason: String },

    #[error("evaluation split of {available} samples is shorter than horizon {horizon}")]
    ShortSplit { available: usize, horizon: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Coverage(_)
            | Error::NonConvergence { .. }
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::ShortSplit { .. } => 3,
            Error::Infeasible { .. } => 4,
            Error::Member { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
