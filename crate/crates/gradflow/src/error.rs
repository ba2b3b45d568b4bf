use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("value out of floating range: {0}")]
    OutOfRange(String),
    #[error("supremum is unbounded: {0}")]
    Unbounded(String),
    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),
    #[error("step size underflow at t = {t} (dt = {dt:e})")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("invalid generator: {0}")]
    Generator(String),
    #[error("chain is reducible, stationary vector is not unique")]
    Reducible,
    #[error("detailed balance fails, max relative asymmetry {residual:e}")]
    NotReversible { residual: f64 },
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
