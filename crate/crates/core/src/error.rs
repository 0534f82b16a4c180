use thiserror::Error;

/// Errors shared across the library.
#[derive(Error, Debug)]
pub enum Error {
    /// A distribution parameter is outside its domain.
    #[error("parameter out of domain: {name} = {value}")]
    ParameterDomain { name: &'static str, value: f64 },

    /// All weights of a multinomial partition are zero while the total is positive.
    #[error("degenerate multinomial weights: all zero with total {total}")]
    DegenerateWeights { total: u64 },

    /// A matrix factorization failed even after diagonal jitter.
    #[error("numerical stability failure: {context}")]
    NumericalStability { context: String },

    /// Vector/matrix dimensions do not match.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A label is not in {0, 1} (or {-1, +1}).
    #[error("label out of domain at line {line}: {value}")]
    LabelDomain { line: usize, value: f64 },

    /// A stride partition produced an empty train or test set.
    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),

    /// The training data cannot support inference (e.g. no positive examples).
    #[error("degenerate dataset: {0}")]
    DegenerateData(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
