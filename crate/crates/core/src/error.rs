use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the support of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{model} failed to converge after {iterations} iterations")]
    NonConvergence { model: &'static str, iterations: usize },

    /// Coefficients diverge because the outcome is perfectly predicted.
    #[error("separation detected: {0}")]
    Separation(String),

    #[error("singular or rank-deficient matrix in {0}")]
    Singular(&'static str),

    #[error("all assignment weights underflowed for subject {0}")]
    WeightUnderflow(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
