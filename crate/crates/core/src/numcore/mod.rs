//! Reverse-mode autodiff over a fixed op set, the Adam optimiser and a finite-difference oracle.

mod adam;
mod finite_diff;
pub(crate) mod gemm;
mod graph;
mod tensor;

pub use adam::{adam_update, AdamState, SkippedUpdate};
pub use finite_diff::{finite_diff_gradient, relative_error};
pub use graph::{Graph, NodeId, Op};
pub use tensor::Tensor;

/// Negative slope used by every leaky-ReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[cfg(test)]
mod graph_tests;
