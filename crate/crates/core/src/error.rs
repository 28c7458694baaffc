//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {0:?}: every extent must be positive")]
    InvalidDims(Vec<usize>),

    #[error("value buffer has length {got}, expected {want}")]
    LengthMismatch { got: usize, want: usize },

    #[error("mode {mode} out of range for a {ndim}-way tensor")]
    ModeOutOfRange { mode: usize, ndim: usize },

    #[error("index {index} out of range [1..={bound}] for mode {mode}")]
    IndexOutOfRange { mode: usize, index: usize, bound: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("degenerate sampling weight: {0}")]
    DegenerateWeight(String),

    #[error("run diverged: {0}")]
    Diverged(String),

    #[error("relative error is undefined for an all-zero tensor")]
    ZeroTensor,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("explicit construction of {got} rows exceeds the cap of {cap}")]
    CapExceeded { got: usize, cap: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
