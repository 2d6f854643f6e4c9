//! Differentiable computation: tensors, a reverse-mode tape, parameter
//! stores with Adam, initialization, gradient verification and checkpoints.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradients, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use nn::{LayerNorm, Linear, Mlp};
pub use params::{
    reparam_gaussian, xavier_bound, xavier_init, Adam, ParamGrads, ParamId, ParamStore, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPS,
};
pub use tensor::Tensor;
