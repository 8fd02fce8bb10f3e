//! Error type shared across the library.

use thiserror::Error;

/// Library-wide error. The CLI maps variants onto process exit codes
/// (usage → 1, data/numeric → 2, stale artifact → 3).
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (bad dimension, bad flag, empty input).
    #[error("usage error: {0}")]
    Usage(String),

    /// Data is malformed or an operation on it cannot proceed.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric computation produced a non-finite value where one is not allowed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset generation could not finish (rejection sampling budget exhausted).
    #[error("generation error: {0}")]
    Generation(String),

    /// Training diverged.
    #[error("training error: {0}")]
    Training(String),

    /// Gradient extraction produced an unusable set.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// Expression text could not be parsed; `offset` is a byte position.
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { message: String, offset: usize },

    /// An artifact on disk does not match the hash recorded when it was produced.
    #[error("stale artifact: {0}")]
    StaleArtifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
