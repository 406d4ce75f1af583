use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: bad dimension, malformed domain, point outside the
    /// domain, coincident configuration points, nonsensical grids.
    #[error("invalid input: {0}")]
    Config(String),

    /// A solver or iteration failed to converge within its budget.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested quantity is not defined in this regime (for example a
    /// finite profile limit in the logarithmic dimension N = 4, or a
    /// blow-up law at a degenerate configuration).
    #[error("not defined: {0}")]
    NotDefined(String),

    /// The configuration cannot arise as a concentration limit: the lowest
    /// eigenvalue of the interaction matrix is strictly negative.
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn not_defined(msg: impl Into<String>) -> Self {
        Error::NotDefined(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
