//! Dense tensors and a define-by-run reverse-mode tape.
//!
//! Every forward pass records onto a fresh [`Tape`]; [`Tape::backward`] walks
//! the recorded nodes once in reverse and leaves `∂loss/∂node` on every node
//! that requires a gradient.

mod array;
mod ops;
mod tape;

pub use array::Tensor;
pub use ops::Unary;
pub use tape::{Tape, Var};

/// Lower clamp applied to `log` inputs.
pub const LOG_FLOOR: f64 = 1e-12;
/// Upper clamp applied to `exp` inputs.
pub const EXP_CEIL: f64 = 80.0;

#[cfg(test)]
mod tests;
