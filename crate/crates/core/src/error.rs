//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the engine. I/O failures keep their source; everything
/// else carries a human-readable description of what was violated.
#[derive(Debug, Error)]
pub enum Error {
    /// Value outside its documented domain (dates, humidity, ages, ...).
    #[error("range: {0}")]
    Range(String),

    /// A bounded resource ran out (surrogate key space, memory budget).
    #[error("capacity: {0}")]
    Capacity(String),

    /// A name with no encodable letters.
    #[error("invalid name: {0}")]
    InvalidName(String),

    /// Secret-key material missing or too short.
    #[error("key: {0}")]
    Key(String),

    /// Unreadable or structurally invalid input file.
    #[error("parse: {0}")]
    Parse(String),

    /// Data that contradicts an engine invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// Malformed scan predicate, cube spec, or report request.
    #[error("query: {0}")]
    Query(String),

    /// Batch id that staging does not know about.
    #[error("unknown batch {0}")]
    UnknownBatch(u64),

    /// Time series too short for the requested analysis window.
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    /// Correlation requested against a zero-variance series.
    #[error("undefined correlation: series {0} has zero variance")]
    UndefinedCorrelation(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
