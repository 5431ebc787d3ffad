use thiserror::Error;

/// Errors surfaced by the learners, samplers and generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value outside the domain of a partial function, e.g. the log of a
    /// zero probability.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("budget exceeded: {requested} {what} requested, cap is {cap}")]
    BudgetExceeded {
        what: &'static str,
        requested: u64,
        cap: u64,
    },

    /// Reading or writing a stream file failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
