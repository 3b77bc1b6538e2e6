use thiserror::Error;

/// Errors raised by model construction, analysis and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The request exceeds an enumeration or state-space guard.
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("unstable system: {0}")]
    Unstable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
