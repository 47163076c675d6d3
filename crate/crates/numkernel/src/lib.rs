//! Minimal dense numerical kernel.
//!
//! Everything here works on row-major `f64` data. Vectors have shape `[n]`,
//! matrices `[rows, cols]` and scalars `[1]`; there is no broadcasting beyond
//! matrix-vector products and vector-by-scalar scaling.
//!
//! Differentiation is reverse mode over a [`Tape`]: every operation appends a
//! node, so node order is already a topological order and the backward pass
//! is a single reverse sweep.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gru::{GruCell, GruVars};
pub use mlp::{Activation, Linear, LinearVars, Mlp, MlpVars};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> KernelError {
    KernelError::Shape {
        op,
        detail: detail.into(),
    }
}
