use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, out-of-range arguments, incompatible models.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or missing input data.
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },
    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures caused by numerics rather than inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Training { .. } | Error::Integration { .. })
    }
}
