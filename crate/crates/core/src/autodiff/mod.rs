//! Tensor arithmetic with reverse-mode automatic differentiation.

mod gradcheck;
pub mod kernels;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_at};
#[cfg(test)]
pub(crate) use ops::softplus_scalar;
pub use tape::{Gradients, Tape, Var};

/// Variance stabilizer used by every layer norm in the network.
pub const LN_EPS: f64 = 1e-5;
