//! Reverse-mode differentiation for the codec's fixed layer vocabulary,
//! plus the optimizer and checkpoint archive.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use layers::{conv_relu, Conv, IRBlock, IrbStack};
pub use loss::{bce_with_logits, bce_with_logits_grad, sigmoid};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, NodeId, SparseVar, Tape};
