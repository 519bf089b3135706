use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain the operation accepts.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Two operands that must agree (record sizes, vector lengths) do not.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A server request refers to records the database does not have.
    #[error("bad request: {0}")]
    Request(String),

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    /// The anonymity channel could not route a reply.
    #[error("routing failed: {0}")]
    Routing(String),

    /// An exact enumeration would exceed its budget.
    #[error("instance too large for exact enumeration: {0}")]
    Size(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("transport error talking to server {server}: {reason}")]
    Transport { server: usize, reason: String },

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
