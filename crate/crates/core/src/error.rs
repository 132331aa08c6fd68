use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QuirkError>;

#[derive(Debug, Error)]
pub enum QuirkError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("requested {requested} qubits but the limit is {max}")]
    Capacity { requested: usize, max: usize },

    #[error("unknown {what} '{name}'; known: {}", known.join(", "))]
    Lookup {
        what: &'static str,
        name: String,
        known: Vec<String>,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("unsupported format version {found}; expected one of {expected:?}")]
    Version { found: i64, expected: Vec<i64> },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl QuirkError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QuirkError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QuirkError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        QuirkError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by numerical failure rather than bad input or IO.
    pub fn is_numeric(&self) -> bool {
        matches!(self, QuirkError::Divergence { .. })
    }
}
