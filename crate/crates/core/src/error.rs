use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("malformed {kind}: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, printed by the command-line tool on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } | Error::Diverged { .. } => "numeric",
            Error::Config(_) => "config",
            Error::Tape(_) => "tape",
            Error::Vocabulary(_) => "vocabulary",
            Error::Input(_) | Error::UndefinedCorrelation(_) => "input",
            Error::Parse { .. } | Error::Format { .. } => "format",
            Error::Io { .. } | Error::Wav(_) => "io",
        }
    }
}
