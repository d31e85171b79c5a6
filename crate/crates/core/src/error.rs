use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("transform not applicable: {0}")]
    NotApplicable(String),
    #[error("unknown cue `{0}`")]
    UnknownCue(String),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("insufficient sound bank: {0}")]
    InsufficientBank(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("backend request failed after {attempts} attempt(s): {message}")]
    Backend { attempts: usize, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
