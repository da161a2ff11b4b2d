//! Dense tensors, reverse-mode autodiff, MLPs and optimization primitives.

mod checkpoint;
mod nn;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use nn::{clip_global_norm, global_norm, Adam, BoundMlp, Linear, Mlp, Module};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;
