use std::path::PathBuf;

/// Errors surfaced by the landscape library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no records")]
    NoRecords,

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in record {index}: {what}")]
    NonFinite { index: usize, what: &'static str },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("vocabulary checksum mismatch: model has {model}, vocabulary has {vocab}")]
    ChecksumMismatch { model: String, vocab: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric failures (as opposed to bad input data).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::InvalidMixture(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
