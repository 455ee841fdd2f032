//! Minimal reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; each forward op records its operands and
//! `Tape::backward` walks the list once in reverse. Leaves created with
//! [`Tape::param`] collect gradients, leaves from [`Tape::constant`] do not.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
