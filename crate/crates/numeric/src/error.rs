use thiserror::Error;

/// Failures raised by tensor construction, graph ops, and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: output contains a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: index {index} out of range (size {size})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("gradient for parameter '{name}' is non-finite; step aborted")]
    NonFiniteGrad { name: String },

    #[error("optimizer state holds {state} parameters but {given} were supplied")]
    ParamCountMismatch { state: usize, given: usize },

    #[error("parameter '{name}' changed shape: state {state:?}, given {given:?}")]
    ParamShapeMismatch {
        name: String,
        state: Vec<usize>,
        given: Vec<usize>,
    },

    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint format: {0}")]
    Format(String),
}
