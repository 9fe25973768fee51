//! Tape-based automatic differentiation with the layers the networks need.

mod gemm;
mod gradcheck;
mod graph_ops;
mod ops;
mod tape;

pub use gradcheck::{gradient_check, gradient_check_with_step, relative_error, GradCheckReport, GroupCheck};
pub use graph_ops::PoolIndices;
pub use tape::{BackwardFn, Grads, Tape, Tensor, Var};

#[cfg(test)]
mod tests;
