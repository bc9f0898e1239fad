//! Differentiable computation core: tensors, the fixed conv/fc layer
//! vocabulary, per-sample loss terms, RMSProp and global-norm clipping.

mod graph;
mod loss;
mod optim;
mod params;
mod snapshot;
mod tensor;

pub use graph::{ComputeGraph, GraphSpec, Gradients, LayerKind, LayerSpec, Output, OutputGrad};
pub use loss::{argmax, cross_entropy, entropy, log_softmax, policy_gradient, softmax, value_mse, LossTerm};
pub use optim::{clip_global_norm, RmsPropConfig, RmsPropState};
pub use params::ParamSet;
pub use snapshot::Snapshot;
pub use tensor::{Scalar, Tensor};
