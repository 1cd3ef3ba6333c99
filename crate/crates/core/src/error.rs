use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the aggregation and retrieval pipeline.
#[derive(Debug, Error)]
pub enum CrowError {
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("missing query descriptors for: {}", .0.join(", "))]
    MissingQueries(Vec<String>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CrowError>;
