//! Geometry-informed pruning for mesh-valued regression.
//!
//! Pairwise distances between the points of an undeformed mesh define a
//! binary mask; weights connecting points further apart than a threshold are
//! removed from the hidden layers of the network. The crate contains the
//! mask construction, a synthetic cup-drawing data generator, the pruned
//! ("cupnet") and dense reference ("regnet") architectures with hand-written
//! backpropagation, Adam training and a benchmark harness.

pub mod bench;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod network;
pub mod synthcup;
pub mod training;

pub use error::{Error, Result};
