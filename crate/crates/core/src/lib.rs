//! A trace-driven cache policy laboratory.
//!
//! The offline half trains a small network over byte-level embeddings of
//! missed `(pc, address)` pairs: an LSTM predicts the bytes of the next miss
//! and a multi-task decoder estimates the future frequency and reuse distance
//! of an address given a kernel density summary of the recent miss window.
//! The online half replays a trace through a cache whose admission,
//! prefetching and eviction decisions come from that network, next to the
//! classical LRU, LFU, FIFO, LIFO and Belady baselines.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Training and
//! gradient checks run in `f64`; the aliases below name the common
//! instantiations.

pub mod config;
pub mod embed;
pub mod error;
pub mod kde;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod scalar;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision network.
pub type Model = model::DeapModel<f64>;
/// Reduced-precision network for inference.
pub type Model32 = model::DeapModel<f32>;
pub type Tables = embed::ByteEmbeddingTables<f64>;
pub type Optimizer = nn::Optimizer<f64>;
/// Learned cache policy over a training-precision model.
pub type LearnedPolicy<'a> = sim::LearnedPolicy<'a, f64>;
pub type LearnedPolicy32<'a> = sim::LearnedPolicy<'a, f32>;
