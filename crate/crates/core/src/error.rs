use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("sweep pivot {index} is numerically zero ({value:e})")]
    SingularPivot { index: usize, value: f64 },

    #[error("index {index} out of range for dimension {bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("observation {obs} has missing entries; cell (row {row}, col {col}) is the first")]
    MissingData { obs: usize, row: usize, col: usize },

    #[error("singular estimate: {0}")]
    Singular(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
