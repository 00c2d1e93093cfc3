//! Gaussian splatting reconstruction of plants with object-centric masking,
//! and extraction of metric plant traits from the reconstructed splat centers.

pub mod dataset;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod phenotype;
pub mod render;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
