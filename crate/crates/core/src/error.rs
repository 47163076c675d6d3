use thiserror::Error;
use tgx_numkernel::KernelError;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("node {node} is not present in snapshot {snapshot}")]
    MissingEndpoint { node: NodeId, snapshot: usize },

    #[error("no prior events within reach of ({src}, {dst}) before t={t}; nothing to explain")]
    EmptyNeighborhood { src: NodeId, dst: NodeId, t: f64 },

    #[error("model expects {expected} graphs, got {got}")]
    ModeMismatch { expected: &'static str, got: &'static str },

    #[error("mask has {got} entries but the subgraph has {expected} edges")]
    MaskLength { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{count} candidates exceed the enumeration bound of {max}")]
    TooManyCandidates { count: usize, max: usize },

    #[error("loss became non-finite at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::Kernel(KernelError::NonFinite { .. })
                | Error::Kernel(KernelError::NonFiniteGradient { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
