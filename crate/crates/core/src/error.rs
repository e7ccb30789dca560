use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("malformed landmark row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("landmark indices are not contiguous: expected {expected}, found {found}")]
    NonContiguousIndices { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point ({x}, {y}) lies outside the {width}x{height} domain")]
    PointOutOfDomain { x: f64, y: f64, width: usize, height: usize },
    #[error("feature depth mismatch: {0} vs {1}")]
    DepthMismatch(usize, usize),
    #[error("k = {k} exceeds point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("window {window} larger than image side {side}")]
    WindowTooLarge { window: usize, side: usize },
    #[error("field too small: {width}x{height}")]
    FieldTooSmall { width: usize, height: usize },
    #[error("class count mismatch: {0} vs {1}")]
    ClassCountMismatch(usize, usize),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("non-finite loss at level {level}, iteration {iteration}")]
    NonFiniteLoss { level: usize, iteration: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty mask for class {0}")]
    EmptyMask(u32),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("invalid field file: {0}")]
    InvalidField(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
