//! Error and result types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// `Validation` covers malformed or inconsistent user input (panels that
/// violate the staggered-adoption structure, bad configuration values);
/// `Computation` covers numerical failures (degenerate designs, estimators
/// with empty comparison sets); `Io`/`Csv`/`Json` wrap the underlying
/// serialization machinery.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data or configuration violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical procedure could not produce a usable result.
    #[error("computation error: {0}")]
    Computation(String),

    /// Underlying file-system failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV input or output failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed JSON input or output failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error stems from user input rather than internal
    /// computation; front ends map this to a distinct exit code.
    pub fn is_user_error(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Csv(_))
    }
}
