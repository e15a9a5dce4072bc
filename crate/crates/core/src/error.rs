use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("problem too large for exact enumeration: {units} units (limit {limit})")]
    Size { units: usize, limit: usize },
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("unknown unit: {0}")]
    Lookup(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("registries are incompatible: {0}")]
    Incompatible(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
