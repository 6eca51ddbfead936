use thiserror::Error;

#[derive(Debug, Error)]
pub enum TodaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-generic data: {0}")]
    NonGeneric(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gamma function pole at {0}")]
    GammaPole(f64),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("integration failed at {at}: {reason}")]
    Integration { at: String, reason: String },

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("outside domain: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, TodaError>;
