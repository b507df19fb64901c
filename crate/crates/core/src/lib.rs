//! Feature-graph malware detection.
//!
//! The pipeline turns the static features of a PE binary into a small graph
//! (one node per feature group plus per-library and per-section children),
//! learns a graph embedding with a deep graph convolutional network using
//! sort pooling, and classifies it with a perceptron head.

pub mod baselines;
pub mod dgcnn;
pub mod error;
pub mod graph;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod pe;
pub mod seed;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
