//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural or numerical precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// Exponential-moment condition on the jump measures does not hold.
    #[error("moment condition violated: {0}")]
    MomentCondition(String),

    /// A numerical routine could not complete (non-PSD matrix, overflow, ...).
    #[error("numeric: {0}")]
    Numeric(String),

    /// Requested operation outside the supported range.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: validation-class failures map to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::MomentCondition(_) | Error::Config(_) => 2,
            _ => 1,
        }
    }
}
