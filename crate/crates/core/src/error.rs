use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("midi parse error at byte {offset}: {message}")]
    Midi { offset: usize, message: String },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape { what: String, expected: usize, got: usize },

    #[error("empty cover")]
    EmptyCover,

    #[error("tensor file: {0}")]
    TensorFormat(String),

    #[error("audio: {0}")]
    Audio(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape { what: what.into(), expected, got }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable identifier, used by the CLI for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Midi { .. } => "midi",
            Error::Shape { .. } => "shape",
            Error::EmptyCover => "empty_cover",
            Error::TensorFormat(_) => "tensor_format",
            Error::Audio(_) => "audio",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "non_finite",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
