//! Relational-database graph learning with a Gaussian temporal-bias graph
//! transformer: ingestion, synthetic data, causal subgraph sampling, the
//! model and its training loop.

pub mod attention;
pub mod dataset;
pub mod encoders;
mod error;
pub mod features;
pub mod gnnbranch;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod relstore;
pub mod sampler;
pub mod synthgen;
pub mod trainer;

pub use error::{CoreError, Result};
