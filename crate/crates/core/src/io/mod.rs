//! Dataset ingestion and persistence.

pub mod checkpoint;
pub mod colmap;
pub mod frames;
pub mod manifest;
pub mod ply;
pub mod reports;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use colmap::{load_colmap_text, write_colmap_text, ColmapModel};
pub use frames::{load_rgba, write_gray16, write_rgb, write_rgba, RgbaFrame};
pub use manifest::{load_dataset, prepare_dataset, split_dataset, Manifest, Split};
pub use ply::{read_ply, write_points_ply, write_scene_ply, PlyFormat, PlyImport};
pub use reports::ConfigFile;
