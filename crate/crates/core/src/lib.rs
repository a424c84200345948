//! Confidence-aware bipartite graph network for scene graph generation.
//!
//! The crate covers the full pipeline at desk scale: proposal
//! representations, the gated bipartite message-passing network, the scene
//! graph predictor, bi-level long-tail resampling, the training losses and
//! the standard SGG evaluation metrics.

pub mod ablation;
pub mod bgnn;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod harness;
pub mod layers;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod predictor;
pub mod proposals;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
