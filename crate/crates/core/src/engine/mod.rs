//! Dense tensors, primitive ops, and tape-based reverse-mode gradients.

mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::fd_check;
pub use ops::{forward_op, vjp, Op};
pub use params::ParamSet;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Epsilon added to the variance inside layer normalisation.
pub const LAYERNORM_EPS: f64 = 1e-5;
