use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite kernel value at pair ({i}, {j})")]
    NonFiniteKernel { i: usize, j: usize },
    #[error("divergence at step {step} (last finite risk {last_risk})")]
    Divergence { step: usize, last_risk: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("missing snapshots: {0}")]
    MissingSnapshots(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
