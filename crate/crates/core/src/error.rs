use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes or axes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A layer, network or packing configuration is not realizable.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A value lies outside the domain of the operation.
    #[error("invalid input: {0}")]
    Input(String),
    /// An operation was invoked in the wrong order.
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
