use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("path not found: {0}")]
    MissingPath(PathBuf),
    #[error("malformed table {path}: {reason}")]
    MalformedTable { path: PathBuf, reason: String },
    #[error("empty vocabulary: {0}")]
    EmptyVocabulary(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unlabeled column {column} in table {table}")]
    UnlabeledColumn { table: String, column: usize },
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("instance too large for exhaustive enumeration: {0} sequences")]
    InstanceTooLarge(u128),
    #[error("missing model stage: {0}")]
    MissingStage(&'static str),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("config error on line {line}: {reason}")]
    Config { line: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-parseable CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingPath(_) => "missing-path",
            Error::MalformedTable { .. } => "malformed-table",
            Error::EmptyVocabulary(_) => "empty-vocabulary",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::UnlabeledColumn { .. } => "unlabeled-column",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::InstanceTooLarge(_) => "instance-too-large",
            Error::MissingStage(_) => "missing-stage",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::CorruptModel(_) => "corrupt-model",
            Error::Config { .. } => "config",
        }
    }
}
