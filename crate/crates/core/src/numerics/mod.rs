//! Differentiable numeric backbone: tensors, a recorded compute graph with
//! reverse-mode gradients, parameter storage and Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_LEARNING_RATE};
pub use graph::{
    BufferUpdate, Gradients, Graph, Mode, RunningStats, Var, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, GAUSSIAN_FLOOR, LAYER_NORM_EPS,
};
pub use params::{glorot_uniform, uniform, ParamEntry, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
