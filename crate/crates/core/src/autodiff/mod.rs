//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values are 64-bit floats. Every op on a [`Tape`] is evaluated eagerly and
//! recorded; [`Tape::gradients`] replays the record backwards. Gradients
//! accumulate, so a parameter used at every time step of a recurrence collects
//! the contributions of all of them.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use params::{Gradients, ParamId, Parameter, ParameterSet};
pub use tape::{Tape, TapeMark, Var};
pub use tensor::{log_softmax, matmul, softmax, Tensor};
