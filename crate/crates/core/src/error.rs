use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-physical density matrix: {0}")]
    NonPhysical(String),

    /// The Fock truncation keeps less probability than the configured floor.
    #[error("insufficient truncation: retained mass {mass:.6} below floor {floor}")]
    InsufficientTruncation { mass: f64, floor: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("fit error: {0}")]
    Fit(String),
}
