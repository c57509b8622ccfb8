//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! Operations record a node when any input is tracked; the graph is the set of
//! nodes reachable from a loss and is freed when the last tensor referring to
//! it is dropped. Node ids are handed out monotonically, so sorting by id gives
//! a topological order. Backward passes may run with `create_graph`, which
//! records the adjoint computation itself; that nesting is capped at second
//! order.

mod functional;
mod graph;
mod ops;
mod tensor;

pub use functional::{batch_jacobian_rows, batch_jvp, grad_of_grad, gradient_check, hessian, jacobian, GradCheck};
pub use graph::{backward, grad, Gradients};
pub use tensor::{no_grad, Tensor};
