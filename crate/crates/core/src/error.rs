use thiserror::Error;

/// Errors raised by every module of the crate.
///
/// Variants carry a short message naming the violated precondition so the
/// CLI can report it verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate ray: {0}")]
    DegenerateRay(String),
    #[error("degenerate scale: all camera centers lie at the origin")]
    DegenerateScale,
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("pixel out of bounds: {0}")]
    PixelOutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid sigma: {0}")]
    InvalidSigma(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("degenerate baseline: translation norm below 1e-9")]
    DegenerateBaseline,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("tensor format: {0}")]
    TensorFormat(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
