use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("fields live on different grids")]
    DomainMismatch,
    #[error("boundary tag mismatch: {0}")]
    BcMismatch(String),
    #[error("u-component violates the vertical-mean constraint (residual {residual:.3e})")]
    ConstraintViolated { residual: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("numerical blowup at step {step} (t = {time})")]
    Blowup { step: usize, time: f64 },
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
