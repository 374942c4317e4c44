use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied inconsistent or out-of-range arguments.
    #[error("usage error: {0}")]
    Usage(String),

    /// A closed-form angle bound was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The recovered structure is inconsistent with a valid embedded graph,
    /// which usually means the (R, eps) scale does not fit the data.
    #[error("structural error: {0}")]
    Structural(String),

    /// Fitting produced non-finite values it could not recover from.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Rejection sampling ran out of attempts.
    #[error("generation error: {0}")]
    Generation(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Structural,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) | Error::Domain(_) | Error::Generation(_) => ErrorKind::Usage,
            Error::Structural(_) => ErrorKind::Structural,
            Error::Numerical(_) => ErrorKind::Numerical,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
