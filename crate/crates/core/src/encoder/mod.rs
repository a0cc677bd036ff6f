//! Graph encoder: two attention layers, one graph convolution, mean/max
//! pooling, a projection head and an intent classification head.

mod checkpoint;
mod config;
mod gat;
mod gcn;
pub mod layers;
mod model;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, OptimizerSnapshot};
pub use config::EncoderConfig;
pub use gat::{GatCache, GatLayer};
pub use gcn::{GcnCache, GcnLayer};
pub use layers::{DropoutKey, GraphInput, LayerNorm, Linear};
pub use model::{
    reconstruct_adjacency, softmax, EncoderModel, EncoderParams, ForwardMode, GraphEmbedding, LayerCounts, Trace,
    Upstream,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[cfg(test)]
pub(crate) mod tests;
