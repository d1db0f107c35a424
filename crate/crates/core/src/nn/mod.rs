//! Dense tensors, gated recurrent cells with a pluggable forget-gate
//! activation, backpropagation through time and loss functions.

mod cell;
mod checkpoint;
mod loss;
mod rnn;
mod tensor;

pub use cell::{
    chrono_bias, init_params, CellKind, CellSpec, GateId, GradientSet, InitScheme, ModelParams,
    ReadoutMode, ReadoutSpec,
};
pub use checkpoint::Checkpoint;
pub use loss::{loss_cross_entropy, loss_mse, CrossEntropy};
pub use rnn::{backward_sequence, cell_step, forward_sequence, ForwardCache, State, StepCache};
pub use tensor::{Op, Tensor};

use thiserror::Error;

use crate::gates::GateError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),
    #[error("target id {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid cell spec: {0}")]
    InvalidSpec(String),
    #[error("unknown cell `{0}` (expected one of: tied-lstm, lstm, gru, janet)")]
    UnknownCell(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("cannot parse checkpoint at byte {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
