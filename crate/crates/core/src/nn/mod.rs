//! Minimal tensor autodiff, layers and optimizer used by the model.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Grads, Graph, Mat, NodeId};
pub use layers::{Attention, FeedForward, LayerNorm, Linear};
pub use optim::{clip_global_norm, AdamW};
pub use params::{Group, ParamId, ParamStore};
