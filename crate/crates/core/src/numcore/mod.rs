//! Dense `f64` tensors, a reverse-mode tape and finite-difference checks.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_params, relative_error, CoordCheck, GradCheckOptions, GradCheckReport,
    GroupSummary,
};
pub use graph::{log_sum_exp, sigmoid, Gradients, Graph, Var};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests;
