//! Error taxonomy shared across the crate.

/// Library error. Variants map onto the CLI exit-code contract: input and
/// domain problems are usage errors, solver and model problems are numerical
/// failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A mathematical argument escaped its domain (negative degrees of
    /// freedom, non-positive scale, probability outside (0,1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input (grid mismatch, malformed mask, missing
    /// values where a band is requested, unsupported estimator for the
    /// sampling design, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An iterative routine failed to bracket or converge.
    #[error("solver error: {0}")]
    Solver(String),

    /// A covariance model could not be factorized within tolerance.
    #[error("model error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }
    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
}
