//! Reconstruct a target shape, given as a volumetric point cloud, from rigidly posed parts
//! retrieved out of a part library.
//!
//! The pipeline trains a part autoencoder over the library, optimises per-part latent codes
//! and yaw poses against the target, periodically re-segments the target to escape local
//! optima, optionally borrows solutions between similar targets, and finally swaps every
//! latent part for its best-fitting library part.

pub mod decomposer;
pub mod error;
pub mod geom;
pub mod harness;
pub mod numcore;
pub mod partvae;
pub mod pipeline;
pub mod retrieval;
pub mod seed;

pub use error::{Error, Result};
