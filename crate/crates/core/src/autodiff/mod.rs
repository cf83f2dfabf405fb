//! Reverse-mode differentiation over dense `f64` arrays, plus the Adam
//! optimizer and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use gradcheck::{analytic_gradients, compare_gradients, gradient_check, GradCheckReport, RELATIVE_FLOOR};
#[allow(unused_imports)]
pub(crate) use graph::sigmoid;
pub use graph::{Activation, Graph, Var};

#[cfg(test)]
mod tests;
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
