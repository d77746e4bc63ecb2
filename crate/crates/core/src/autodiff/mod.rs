//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor).

mod backward;
mod gradcheck;
mod graph;

pub use backward::Gradients;
pub use gradcheck::{analytic_grad, grad_check, grad_check_at, GradCheckReport};
pub use graph::{Graph, Var};
