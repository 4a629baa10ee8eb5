//! Structured filter pruning for small convolutional networks.
//!
//! The crate covers the whole loop: a small deterministic CNN engine
//! ([`tensor`], [`netgraph`]), per-filter statistics ([`stats`]), eight
//! filter-scoring criteria ([`criteria`]), structural surgery that removes
//! filters and the matching consumer channels ([`surgery`]), the layer-wise
//! prune/fine-tune schedule with its damage and recovery bookkeeping
//! ([`pipeline`]), and datasets, evaluation and CSV reports ([`harness`]).

pub mod container;
pub mod criteria;
pub mod error;
pub mod harness;
pub mod netgraph;
pub mod pipeline;
pub mod stats;
pub mod surgery;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
