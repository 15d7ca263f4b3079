//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by the autodiff engine.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: left {left:?} vs right {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("matmul dimension error: {left:?} incompatible with {right:?}")]
    MatmulDims { left: Vec<usize>, right: Vec<usize> },
    #[error("index out of range at (b={b}, t={t}): id {index} >= {bound}")]
    IndexOutOfRange {
        b: usize,
        t: usize,
        index: usize,
        bound: usize,
    },
    #[error("element count {count} does not match shape {shape:?}")]
    ElementCount { count: usize, shape: Vec<usize> },
    #[error("tensors belong to different graphs")]
    GraphMismatch,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
}

/// Errors raised by tokenization, dataset loading and batching.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error in record {index}: {msg}")]
    Parse { index: usize, msg: String },
    #[error("role violation in record {index}: {msg}")]
    RoleViolation { index: usize, msg: String },
    #[error("sample {index} rejected: {msg}")]
    SampleRejected { index: usize, msg: String },
    #[error("invalid task spec: {0}")]
    Spec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised by model construction and checkpointing.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence length {got} exceeds context length {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("token id {id} at (b={b}, t={t}) exceeds vocabulary {vocab}")]
    TokenOutOfVocab {
        b: usize,
        t: usize,
        id: u32,
        vocab: usize,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by objectives.
#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors raised by the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: u64, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
