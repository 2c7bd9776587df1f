use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("support of size {size} is rank deficient (pivot {pivot:.3e} below tolerance)")]
    RankDeficient { size: usize, pivot: f64 },

    #[error("candidate column {index} is numerically in the span of the current support (f = {schur:.3e})")]
    NearSingular { index: usize, schur: f64 },

    #[error("column {0} has (near) zero energy")]
    ZeroColumn(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dominant support set is empty")]
    EmptySet,

    #[error("exhaustive enumeration requires N <= {limit}, got {n}")]
    TooLarge { n: usize, limit: usize },

    #[error("image dimensions {width}x{height} must both be even")]
    OddDimension { width: usize, height: usize },

    #[error("PGM format error: {0}")]
    Pgm(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
