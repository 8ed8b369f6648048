use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("non-finite value at epoch {epoch}, batch {batch}: {what}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("dataset failed validation with {} violation(s): {}", .0.len(), .0.join("; "))]
    Invalid(Vec<String>),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
