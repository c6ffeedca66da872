//! Dense tensors, a tape-based reverse-mode autodiff graph, and SGD.

mod graph;
pub(crate) mod kernels;
mod optim;
mod tensor;

pub use graph::{BatchMoments, BnStats, Gradients, Graph, Var, BN_EPS};
pub use optim::{Parameter, Sgd};
pub use tensor::Tensor;
