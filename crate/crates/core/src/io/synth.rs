//! On-disk layout of synthetic captures, identical to a prepared dataset.

use std::path::Path;

use crate::dataset::{Dataset, View};
use crate::error::{Error, Result};
use crate::optim::{TrainConfig, TrainMode};
use crate::synth::{SynthCapture, SynthSpec};

use super::colmap::{write_colmap_text, ColmapCamera, ColmapImage, ColmapModel};
use super::frames::write_rgba;
use super::manifest::{
    split_dataset, FrameRecord, Manifest, ManifestCamera, Split, DEFAULT_TRAIN_FRACTION, MANIFEST_FILE,
    MANIFEST_SCHEMA_VERSION,
};
use super::ply::{write_scene_ply, PlyFormat};
use super::reports::write_text;

pub const SPEC_FILE: &str = "spec.toml";
pub const ORACLE_FILE: &str = "oracle.toml";

pub fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    spec.validate()?;
    Ok(spec)
}

pub const TRAIN_PRESET_FILE: &str = "train.toml";

/// Training settings for low-resolution synthetic captures. At a few dozen
/// pixels per object the scale, opacity and color gradients are weak, and
/// Adam's normalization turns them into a random walk at the usual rates.
pub fn synth_train_config(spec: &SynthSpec, mode: TrainMode) -> TrainConfig {
    let mut cfg = TrainConfig::for_mode(mode);
    cfg.iterations = 2000;
    cfg.densify_until = 1500;
    cfg.grad_densify_threshold = 1e-3;
    cfg.sh_degree = spec.sh_degree;
    cfg.lr.log_scale = 1e-3;
    cfg.lr.opacity = 0.01;
    cfg.lr.sh_dc = 1e-3;
    cfg.seed = spec.seed;
    cfg
}

pub fn capture_split(capture: &SynthCapture) -> Result<Vec<Split>> {
    split_dataset(capture.frames.len(), DEFAULT_TRAIN_FRACTION, capture.spec.seed)
}

/// In-memory dataset with the same split the written manifest uses.
pub fn capture_dataset(capture: &SynthCapture) -> Result<Dataset> {
    let split = capture_split(capture)?;
    let mut ds = Dataset {
        points: capture.points.clone(),
        background: [0.0; 3],
        ..Default::default()
    };
    for (f, s) in capture.frames.iter().zip(split) {
        let view = View::new(
            format!("images/{}", f.name),
            f.camera.clone(),
            f.image.clone(),
            Some(f.mask.clone()),
        )?;
        match s {
            Split::Train => ds.train.push(view),
            Split::Test => ds.test.push(view),
        }
    }
    Ok(ds)
}

/// Writes RGBA frames, COLMAP text, the manifest, spec, oracle traits and the
/// ground-truth scene under `dir`.
pub fn write_capture(dir: &Path, capture: &SynthCapture) -> Result<Manifest> {
    let spec = &capture.spec;
    for f in &capture.frames {
        write_rgba(&dir.join("images").join(&f.name), &f.image, Some(&f.mask))?;
    }
    let model = ColmapModel {
        cameras: [(1, ColmapCamera::pinhole(1, spec.width, spec.height, capture.intrinsics))].into(),
        images: capture
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| ColmapImage {
                id: i as u32 + 1,
                qvec: f.qvec,
                tvec: f.tvec,
                camera_id: 1,
                name: f.name.clone(),
            })
            .collect(),
        points: capture.points.clone(),
    };
    write_colmap_text(&dir.join("colmap_text"), &model)?;
    let split = capture_split(capture)?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: spec.seed,
        downsample: 1,
        train_fraction: DEFAULT_TRAIN_FRACTION,
        sparse: Some("colmap_text".into()),
        background: [0.0; 3],
        cameras: vec![ManifestCamera {
            id: 1,
            width: spec.width,
            height: spec.height,
            intrinsics: capture.intrinsics,
        }],
        frames: capture
            .frames
            .iter()
            .zip(split)
            .map(|(f, split)| FrameRecord {
                image: format!("images/{}", f.name),
                camera_id: 1,
                qvec: f.qvec,
                tvec: f.tvec,
                split,
            })
            .collect(),
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    write_text(&dir.join(SPEC_FILE), &toml::to_string_pretty(spec).expect("spec serializes"))?;
    write_text(
        &dir.join(ORACLE_FILE),
        &toml::to_string_pretty(&capture.scene.oracle).expect("oracle serializes"),
    )?;
    write_scene_ply(&dir.join("ground_truth.ply"), &capture.scene.scene, PlyFormat::BinaryLittleEndian)?;
    let preset = super::reports::ConfigFile {
        train: synth_train_config(spec, TrainMode::ObjectCentric),
        ..Default::default()
    };
    write_text(&dir.join(TRAIN_PRESET_FILE), &preset.to_toml())?;
    Ok(manifest)
}
