//! Structural search over box-annotated screen layouts.
//!
//! Pipeline: detection manifests become attributed spatial graphs
//! ([`graph`]), a graph encoder maps them to embeddings ([`encoder`]) trained
//! with a contrastive multi-task objective ([`learning`]), and a hybrid vector
//! plus metadata index ([`index`]) serves queries written in a small
//! conjunctive query language ([`query`]).

pub mod bench;
pub mod encoder;
pub mod graph;
pub mod index;
pub mod learning;
pub mod pipeline;
pub mod query;
mod rng;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

/// Encoder with `f32` parameters, used for training and serving.
pub type Encoder = encoder::EncoderModel<f32>;
/// Encoder with `f64` parameters, used for gradient verification.
pub type Encoder64 = encoder::EncoderModel<f64>;
pub type Graph = graph::UiGraph<f32>;
pub type Graph64 = graph::UiGraph<f64>;
