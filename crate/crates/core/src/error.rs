use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("node {index} does not belong to this tape")]
    DetachedNode { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chain {chain} diverged at step {step}")]
    ChainDivergence { chain: usize, step: usize },

    #[error("training diverged at step {step}: {reason}")]
    TrainingDivergence { step: usize, reason: String },

    #[error("all importance weights are -inf")]
    DegenerateWeights,

    #[error("no samples were assigned to any mode")]
    NoAssignedSamples,

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for the numerical failure family (non-finite values, diverged chains or training).
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::ChainDivergence { .. }
                | Error::TrainingDivergence { .. }
                | Error::DegenerateWeights
        )
    }
}
