use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the stage that raises them; [`Error::kind`] gives a
/// stable machine-readable tag for each.
#[derive(Debug, Error)]
pub enum Error {
    // persistence
    #[error("i/o failure on {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("corrupt payload in {path}: {reason}")]
    CorruptPayload { path: PathBuf, reason: String },

    // value checks
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value: {0}")]
    Numeric(String),

    // backends
    #[error("backend {backend_id} failed: {reason}")]
    Backend { backend_id: String, reason: String },
    #[error("backend {backend_id} does not support {capability}")]
    Capability {
        backend_id: String,
        capability: &'static str,
    },
    #[error("unsupported model format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("training failed: {reason} (final accuracy {accuracy:.3})")]
    Training { reason: String, accuracy: f64 },
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    // pipeline stages
    #[error("generator {generator_id} failed: {reason}")]
    Generation {
        generator_id: String,
        reason: String,
    },
    #[error("landmark detection failed: {0}")]
    Detection(String),
    #[error("anchor pool error: {0}")]
    Pool(String),
    #[error("optimization failed at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },
    #[error("evaluation error: {0}")]
    Evaluation(String),

    // data
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image codec error: {0}")]
    Codec(String),
}

impl Error {
    /// Stable tag used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Persistence { .. } => "persistence",
            Error::MissingFile(_) => "missing_file",
            Error::CorruptHeader { .. } => "corrupt_header",
            Error::CorruptPayload { .. } => "corrupt_payload",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Numeric(_) => "numeric",
            Error::Backend { .. } => "backend",
            Error::Capability { .. } => "capability",
            Error::UnsupportedFormat { .. } => "unsupported_format",
            Error::Training { .. } => "training",
            Error::DatasetTooSmall(_) => "dataset_too_small",
            Error::Generation { .. } => "generation",
            Error::Detection(_) => "detection",
            Error::Pool(_) => "pool",
            Error::Optimization { .. } => "optimization",
            Error::Evaluation(_) => "evaluation",
            Error::Dataset(_) => "dataset",
            Error::Decode { .. } => "decode",
            Error::Codec(_) => "codec",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Persistence { path, source }
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
