//! Minimal dense-tensor autodiff with the layers the backbone needs.

pub mod check;
mod checkpoint;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use graph::{sigmoid, softmax, CustomOp, Gradients, Graph, Var};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, Optimizer};
pub use params::{fan_in_uniform, BoundParams, ParamGrads, Params};
pub use tensor::Tensor;
