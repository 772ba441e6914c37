//! Dense reverse-mode autodiff, parameters, optimizer, and checkpoints.

pub mod checkpoint;
mod optim;
mod param;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, RmsProp};
pub use param::{glorot_uniform, param_count, ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Primitive, Tape, Var, COSINE_EPSILON};
pub use tensor::Tensor;
