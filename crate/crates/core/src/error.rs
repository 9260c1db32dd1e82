use thiserror::Error;

use crate::lattice::Site;

#[derive(Debug, Error)]
pub enum DreError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("site {0} lies outside the window")]
    OutsideWindow(Site),
    #[error("unsupported dimension {0} (this operation requires d = 2)")]
    UnsupportedDimension(usize),
    #[error("model assumption violated at site {site}: {reason}")]
    ModelAssumption { site: Site, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown model `{name}`; known models: {catalog}")]
    UnknownModel { name: String, catalog: String },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DreError> = std::result::Result<T, E>;
