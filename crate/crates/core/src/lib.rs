//! Desk-scale toolkit for studying classifier guidance and classifier-free
//! guidance on low-dimensional synthetic data, plus a nearest-neighbor
//! rectified-flow postprocessor that transports generated samples back toward
//! the real data.
//!
//! Everything is `f64` and runs on the CPU. Inner loops over batches, chains
//! and queries go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise. Results are
//! bit-identical either way.

pub mod analysis;
pub mod classifier;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod flow;
pub mod guidance;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
