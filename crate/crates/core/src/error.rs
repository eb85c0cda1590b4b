use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs outside the physical or mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Singular systems, non-convergence, or results violating numerical invariants.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A matching network could not be synthesized for the requested transformation.
    #[error("synthesis error: {0}")]
    Synthesis(String),
    /// Random geometry sampling gave up.
    #[error("sampling error: {0}")]
    Sampling(String),
    /// Invalid configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numerical(msg.into()))
}
