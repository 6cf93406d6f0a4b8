//! Crate-wide error type. Numeric invariant violations (shape mismatches,
//! non-finite values) are hard errors rather than silent NaN propagation.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors that must agree in length do not.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// An operation produced or was handed a NaN/infinite value.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A scalar or structural argument is outside its documented domain.
    /// The message names the offending field or parameter.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A collection that must be non-empty is empty.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A bounded retry loop ran out of attempts.
    #[error("gave up after {attempts} attempts: {context}")]
    RetryExhausted { attempts: usize, context: String },

    /// Malformed IDX-format file.
    #[error("{path}: {message}")]
    IdxFormat { path: String, message: String },

    /// Experiment configuration failed parsing or validation.
    #[error("config error: {0}")]
    Config(String),

    /// Two runs were compared that are not comparable.
    #[error("incompatible runs: {0}")]
    Incompatible(String),

    /// Malformed metrics file handed back for parsing.
    #[error("metrics parse error: {0}")]
    MetricsParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors a caller caused with bad inputs rather than errors
    /// arising mid-computation. The CLI maps these to its validation exit
    /// code.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Incompatible(_)
                | Error::IdxFormat { .. }
                | Error::LengthMismatch { .. }
                | Error::Empty(_)
        )
    }
}
