//! Dense tensors and tape-based reverse-mode differentiation.

pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{forward_op, Gradients, OpKind, ParamId, Tape, Var};
pub use tensor::{dot, masked_log_softmax, matvec, norm, sigmoid, Tensor};
