use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {at}: expected {expected}, got {got}")]
    Shape {
        at: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown optimizer `{0}`")]
    UnknownOptimizer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of bounds: {0}")]
    OutOfBounds(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column `{column}`: {msg}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        msg: String,
    },

    #[error("{path}: column `{column}` not found")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("catalog has no successfully trained models")]
    EmptyCatalog,

    #[error("model id {0} not found in catalog")]
    UnknownModel(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyCatalog => 3,
            Error::UnknownModel(_) => 4,
            Error::Unsupported(_) => 5,
            _ => 2,
        }
    }
}
