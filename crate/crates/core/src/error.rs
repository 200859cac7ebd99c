use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read input: {0}")]
    Ingest(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt input: {skipped} of {total} lines malformed")]
    CorruptInput { total: usize, skipped: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("numeric input error: {0}")]
    NumericInput(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    Model(String),
}

impl Error {
    /// Errors caused by bad input data or files, as opposed to misuse of the
    /// library or a broken internal invariant.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Ingest(_)
                | Error::Format(_)
                | Error::CorruptInput { .. }
                | Error::EmptyInput(_)
                | Error::NumericInput(_)
                | Error::Split(_)
                | Error::Config(_)
                | Error::Model(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Format(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Model(err.to_string())
    }
}
