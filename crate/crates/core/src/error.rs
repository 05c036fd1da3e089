use thiserror::Error;

/// Errors surfaced by estimation, simulation, and model-loading code.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A numerical routine failed to produce a usable value.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A learner could not be fit on the supplied data.
    #[error("estimation failure: {0}")]
    Estimation(String),
    /// A constrained problem has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
