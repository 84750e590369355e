//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Supported ops cover what a small ConvNet needs: matmul, (broadcast) add,
//! stride-1 conv2d, flatten, 2x2 max-pool, softmax cross-entropy,
//! elementwise activations and straight-through analog (clamp / reduce
//! precision / noise) pipelines.

mod graph;
mod gradcheck;
pub mod kernels;

pub use graph::{Graph, Node, NodeId, Op};
pub use gradcheck::finite_diff_check;
