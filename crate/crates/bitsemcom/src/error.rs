use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument is outside its valid domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A gradient buffer was required but absent.
    #[error("parameter `{0}` has no gradient; run backward before the optimizer step")]
    MissingGradient(String),

    /// The loss left the finite domain during training.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    /// A requested operation has no implementation for the given configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Experiment config file could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file is malformed or does not match the expected model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
