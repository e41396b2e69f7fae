//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles. Leaves are
//! either parameters (gradient tracked) or constants. [`Tape::backward`] walks the
//! record in reverse and returns [`Gradients`]. Any primitive producing a
//! non-finite value poisons the tape; the error names the primitive and is
//! reported by [`Tape::check`] and [`Tape::backward`].

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, numeric_gradient};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
