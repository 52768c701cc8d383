//! Simulator for a photonic accelerator that runs sparse, clustered CNNs.
//!
//! The pipeline is: load a model ([`model`]), prune it ([`sparsify`]),
//! cluster its weights ([`cluster`]), compress layers into dot products
//! ([`dataflow`]), and estimate energy and latency on vector-dot-product
//! units ([`photonic`], [`schedule`]). [`explore`] sweeps the whole pipeline.

pub mod cluster;
pub mod config;
pub mod dataflow;
pub mod error;
pub mod explore;
pub mod fixtures;
pub mod model;
pub mod photonic;
pub mod report;
pub mod schedule;
pub mod sparsify;

pub use error::{Error, Result};
