use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown class label {0:?} (expected SL or EL)")]
    UnknownLabel(String),

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),

    #[error("sentence {id}: {message}")]
    Sentence { id: u32, message: String },

    #[error("missing difficulty scores for sentence ids {0:?}")]
    MissingScores(Vec<u32>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in parameter {0}")]
    NonFinite(String),

    #[error("no masked positions{0}")]
    NoMaskedPositions(String),

    #[error("training: {0}")]
    Training(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
