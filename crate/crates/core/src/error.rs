use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the numerical pipeline.
///
/// The variants are grouped by what the caller can do about them: input
/// problems (`InvalidInput`, `DimensionMismatch`, `UnsupportedOrder`),
/// solver breakdowns (`NotPsd`, `Singular`, `NnlsIterationCap`) and a
/// collapsed plug-in covariance (`DegenerateCovariance`).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("derivative order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("NNLS exceeded its iteration cap of {0}")]
    NnlsIterationCap(usize),

    #[error("plug-in covariance is degenerate: {0}")]
    DegenerateCovariance(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
