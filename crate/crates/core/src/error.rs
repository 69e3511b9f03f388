use thiserror::Error;

/// Errors raised by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or missing inputs.
    #[error("config error: {0}")]
    Config(String),
    /// An input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Caller violated a shape or value contract.
    #[error("contract error: {0}")]
    Contract(String),
    /// Non-finite values appeared during training.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A file did not match the container format.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Contract(_) | Error::Json(_) => 2,
            Error::Numeric(_) => 3,
            Error::Format(_) | Error::Io(_) | Error::Csv(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
