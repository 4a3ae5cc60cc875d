//! Dense tensors, reverse-mode autodiff and the layers the agents need.

use alloc::string::String;

use thiserror::Error;

mod adam;
mod graph;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{softmax_in_place, Activation, Binding, Gradients, Graph, Var};
pub use layers::{
    dense_forward, init_dense, init_dense_with_bound, init_lstm, lstm_forward, reparam_sample, sequence_steps, softmax,
    LOG_STD_MAX, LOG_STD_MIN, TANH_EPS,
};
pub use tensor::{soft_update, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("graph was already consumed by a backward pass")]
    StaleGraph,
    #[error("expected a scalar, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("parameter sets differ in names or shapes")]
    ParamMismatch,
}
