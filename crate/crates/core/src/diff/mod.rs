//! Minimal reverse-mode differentiation: tensors, a define-by-run tape,
//! the network primitives, Adam, and a checkpoint container.

mod adam;
mod checkpoint;
pub mod conv;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_scalar_update, Adam, AdamConfig};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use graph::{shuffle_values, unshuffle_values, Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamSet};
pub use tensor::Tensor;
