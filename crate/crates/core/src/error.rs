use std::io;

use thiserror::Error;

/// Errors raised across the simulator and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// An agent sent something outside the wire protocol.
    #[error("protocol violation: {0}")]
    Protocol(String),
    /// An agent did not answer within its per-tick budget.
    #[error("agent missed its tick budget")]
    AgentTimeout,
    /// Too few samples to compute the requested quantity.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Input file could not be parsed.
    #[error("malformed input: {0}")]
    Malformed(String),
    /// Output location already holds files.
    #[error("{0} is not empty; pass --force to overwrite")]
    OutputExists(std::path::PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OutputExists(_) => 2,
            Error::Protocol(_) | Error::AgentTimeout => 3,
            Error::Io(_) => 4,
            Error::Contract(_) | Error::InsufficientData(_) | Error::Malformed(_) | Error::Json(_) | Error::Csv(_) => 5,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
