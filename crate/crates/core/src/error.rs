use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("blow-up: state norm {norm:e} exceeded guard at t = {t}")]
    BlowUp { t: f64, norm: f64 },
    #[error("integrator did not reach tolerance {tol:e} (last change {change:e})")]
    NoConvergence { tol: f64, change: f64 },
    #[error("quadrature unstable: {0}")]
    Quadrature(String),
    #[error("covariance not positive definite after jitter escalation")]
    NotPositiveDefinite,
    #[error("iteration diverged: {0}")]
    Divergence(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
