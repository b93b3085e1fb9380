use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input contains no ranking data")]
    EmptyInput,

    #[error("label {label} on line {line} exceeds the maximum grade of {max}")]
    LabelOutOfRange { line: usize, label: i64, max: u8 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("item index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("item {0} appears more than once in a ranking")]
    DuplicateItem(usize),

    #[error("log score of item {index} is not finite ({value})")]
    NonFiniteScore { index: usize, value: f64 },

    #[error("enumeration of {count} rankings exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
