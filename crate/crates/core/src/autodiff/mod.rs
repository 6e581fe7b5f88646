//! Tensors on a reverse-mode tape, parameters, and gradient checking.

mod backward;
pub mod gradcheck;
mod kernels;
mod param;
mod tape;

pub use gradcheck::{check_parameter_gradients, finite_difference_check, GradCheckReport};
pub use param::{Parameter, ParameterSet};
pub use tape::{Gradients, Tape, Var};
