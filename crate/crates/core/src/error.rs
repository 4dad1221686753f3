use thiserror::Error;

use crate::catalog::CatalogError;
use crate::gp::GpError;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] CatalogError),

    #[error(transparent)]
    Gp(#[from] GpError),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration {config} exceeds upper bound in dimension {index}")]
    OutOfBounds { config: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid of {size} configurations exceeds the cap of {cap}")]
    GridTooLarge { size: u128, cap: u128 },

    #[error("configuration {0} is not present in the landscape")]
    MissingEntry(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
