use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: &'static str, reason: String },

    #[error("channel {channel} is constant; cannot normalize")]
    DegenerateChannel { channel: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{}:{row}:{column}: {message}", file.display())]
    Parse {
        file: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("cannot stratify: class {class} has {count} instance(s), need at least 2")]
    Stratification { class: String, count: usize },

    #[error("config fingerprint mismatch: checkpoint {found:016x}, expected {expected:016x}")]
    Fingerprint { expected: u64, found: u64 },

    #[error("checkpoint corrupt at byte offset {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    #[error("evaluation set is empty")]
    EmptyEvaluation,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
