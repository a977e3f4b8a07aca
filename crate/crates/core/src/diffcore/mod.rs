//! Reverse-mode differentiation, dense matrices, MLPs and Adam.

mod adam;
mod graph;
mod matrix;
mod mlp;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use graph::{sigmoid, softplus, Gradients, Graph, NodeId};
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, MlpNodes, OutputActivation};
