//! Reverse-mode differentiation over a fixed primitive set, plus the
//! finite-difference harness used to verify it.

mod check;
mod tape;

pub use check::{finite_diff_grad, grad_check, relative_error, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};
