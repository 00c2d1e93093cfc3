//! Synthetic scenes with known geometry and traits.

mod capture;
mod plant;
pub mod random;

pub use capture::{generate_dataset, ring_cameras, SynthCapture, SynthFrame, MASK_THRESHOLD};
pub use plant::{generate_scene, Membership, OracleTraits, SynthScene, SynthSpec};
