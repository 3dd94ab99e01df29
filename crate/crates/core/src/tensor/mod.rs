//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Values live in [`Tensor`]; differentiable computations are recorded on a
//! [`Tape`] and addressed through [`Var`] handles. A tape is single-threaded
//! and single-use: build it, call [`Tape::backward`] once, read gradients.

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod value;

pub use gradcheck::{grad_check, grad_check_many, GradCheck, GradCheckOptions};
pub use tape::{Tape, Var, NORM_EPS};
pub use value::Tensor;
