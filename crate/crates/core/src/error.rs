use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, bad
    /// argument range, malformed input file).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A gate transform was evaluated outside its domain.
    #[error("gate transform `{transform}` undefined at coordinate {coordinate} (value {value})")]
    Domain {
        transform: String,
        coordinate: usize,
        value: f64,
    },

    /// A constructed quantity left its admissible range.
    #[error("range error: {0}")]
    Range(String),

    /// A numerical check could not reach a verdict.
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
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
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
