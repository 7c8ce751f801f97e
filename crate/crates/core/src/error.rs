use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Each variant maps to a stable
/// machine-readable code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported modulation scheme: {0}")]
    UnsupportedScheme(String),
    #[error("invalid signal length: {0}")]
    InvalidLength(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid Welch parameters: {0}")]
    InvalidWelchParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no prototype for class {0}")]
    MissingPrototype(usize),
    #[error("empty support set: {0}")]
    EmptySupport(String),
    #[error("non-finite loss at epoch {epoch}, episode {episode}: {value}")]
    NonFiniteLoss {
        epoch: usize,
        episode: usize,
        value: f64,
    },
    #[error("invalid class counts: {0}")]
    InvalidCounts(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),
    #[error("corrupt weights: {0}")]
    CorruptWeights(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable error code surfaced by the command-line interface.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnsupportedScheme(_) => "E_UNSUPPORTED_SCHEME",
            Error::InvalidLength(_) => "E_INVALID_LENGTH",
            Error::InvalidChannel(_) => "E_INVALID_CHANNEL",
            Error::InvalidConfig(_) => "E_INVALID_CONFIG",
            Error::InvalidWelchParams(_) => "E_INVALID_WELCH_PARAMS",
            Error::ShapeMismatch(_) => "E_SHAPE_MISMATCH",
            Error::DimensionMismatch { .. } => "E_DIMENSION_MISMATCH",
            Error::InsufficientData(_) => "E_INSUFFICIENT_DATA",
            Error::MissingPrototype(_) => "E_MISSING_PROTOTYPE",
            Error::EmptySupport(_) => "E_EMPTY_SUPPORT",
            Error::NonFiniteLoss { .. } => "E_NONFINITE_LOSS",
            Error::InvalidCounts(_) => "E_INVALID_COUNTS",
            Error::DegenerateLabels(_) => "E_DEGENERATE_LABELS",
            Error::LengthMismatch(_) => "E_LENGTH_MISMATCH",
            Error::DatasetNotFound(_) => "E_DATASET_NOT_FOUND",
            Error::CorruptDataset(_) => "E_CORRUPT_DATASET",
            Error::UnsupportedSchema(_) => "E_UNSUPPORTED_SCHEMA",
            Error::CorruptWeights(_) => "E_CORRUPT_WEIGHTS",
            Error::Io { .. } => "E_IO",
            Error::Json { .. } => "E_JSON",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
