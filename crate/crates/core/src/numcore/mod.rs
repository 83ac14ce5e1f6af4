//! Dense `f64` tensors, a reverse-mode tape, and a finite-difference gradient checker.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use params::{glorot, normal, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
