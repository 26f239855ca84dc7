use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("undefined attractor: mask for speaker {0} has no active bins")]
    EmptyMask(usize),
    #[error("requested {k} clusters from {m} points")]
    TooFewPoints { k: usize, m: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
