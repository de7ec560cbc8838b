//! Temporal aggregation-propagation graph networks.
//!
//! The crate builds temporal node indices over timestamped interaction
//! graphs, runs exact full-neighbourhood graph convolutions as a
//! per-timestamp aggregation followed by a per-node chronological scan,
//! trains dynamic node embeddings for future link prediction, and folds
//! streaming edge batches into per-node state at a cost independent of the
//! history length.

pub mod container;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod streaming;
pub mod synthetic;

pub use error::{Error, Result};
