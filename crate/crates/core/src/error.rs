use std::fmt;

/// Failure modes shared by every module. The CLI maps them to exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad input: unknown catalog name, unsupported pairing, empty test set.
    Config(String),
    /// A finite budget (support size, steps, leaves) was exhausted.
    Resource { what: String, budget: usize },
    /// Two routes to the same quantity disagree, or a quadrature missed its target.
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Resource { what, budget } => {
                write!(f, "resource budget exceeded: {what} (budget {budget})")
            }
            Error::Numerical(msg) => write!(f, "numerical consistency error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn resource<T>(what: impl Into<String>, budget: usize) -> Result<T> {
    Err(Error::Resource {
        what: what.into(),
        budget,
    })
}
