//! Prepared datasets: downsampled RGBA frames, a seeded train/test split and a
//! JSON manifest describing both.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SparsePoint, View};
use crate::error::{Error, Result};
use crate::scene::CameraView;

use super::colmap::{load_colmap_text, write_colmap_text, ColmapCamera, ColmapImage, ColmapModel};
use super::frames::{load_rgba, write_rgba};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Camera table entry, intrinsics already scaled to the stored frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCamera {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    /// `[fx, fy, cx, cy]`
    pub intrinsics: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Relative to the manifest directory.
    pub image: String,
    pub camera_id: u32,
    /// World-to-camera rotation `(qw, qx, qy, qz)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub downsample: usize,
    pub train_fraction: f64,
    /// COLMAP text directory with the sparse points, relative to the manifest.
    pub sparse: Option<String>,
    /// Color the frames were composited on, where known.
    pub background: [f64; 3],
    pub cameras: Vec<ManifestCamera>,
    pub frames: Vec<FrameRecord>,
}

/// Train/test assignment: a seeded shuffle whose first `ceil(fraction * n)`
/// frames train.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if n < 2 {
        return Err(Error::Dataset(format!("splitting needs at least 2 frames, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Keep at least one frame on each side.
    let n_train = ((train_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut split = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    Ok(split)
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Dataset(format!(
                "manifest schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for f in &self.frames {
            if !self.cameras.iter().any(|c| c.id == f.camera_id) {
                return Err(Error::Dataset(format!("frame {} references unknown camera {}", f.image, f.camera_id)));
            }
        }
        Ok(())
    }

    pub fn camera_view(&self, frame: &FrameRecord) -> Result<CameraView> {
        let cam = self
            .cameras
            .iter()
            .find(|c| c.id == frame.camera_id)
            .ok_or_else(|| Error::Dataset(format!("unknown camera {}", frame.camera_id)))?;
        CameraView::from_quaternion(cam.intrinsics, cam.width, cam.height, frame.qvec, frame.tvec)
    }

    pub fn count(&self, split: Split) -> usize {
        self.frames.iter().filter(|f| f.split == split).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// Downsamples every registered image in `images_dir` by `factor`, writes the
/// frames and sparse points under `out_dir` and returns the manifest written
/// to `out_dir/manifest.json`.
pub fn prepare_dataset(
    images_dir: &Path,
    colmap_dir: &Path,
    out_dir: &Path,
    factor: usize,
    seed: u64,
    require_masks: bool,
) -> Result<Manifest> {
    let model = load_colmap_text(colmap_dir)?;
    if factor == 0 {
        return Err(Error::InvalidParameter("downsample factor must be at least 1".into()));
    }
    let split = split_dataset(model.images.len(), DEFAULT_TRAIN_FRACTION, seed)?;
    let frames_dir = out_dir.join("images");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let written: Vec<(usize, usize)> = model
        .images
        .par_iter()
        .map(|im| {
            let frame = load_rgba(&images_dir.join(&im.name), factor, require_masks)?;
            let out = frames_dir.join(png_name(&im.name));
            write_rgba(&out, &frame.rgb, frame.mask.as_ref())?;
            Ok((frame.rgb.width(), frame.rgb.height()))
        })
        .collect::<Result<_>>()?;

    let mut cameras = Vec::new();
    for (id, cam) in &model.cameras {
        let users: Vec<usize> = (0..model.images.len()).filter(|&i| model.images[i].camera_id == *id).collect();
        let Some(&first) = users.first() else { continue };
        let (w, h) = written[first];
        if users.iter().any(|&i| written[i] != (w, h)) {
            return Err(Error::Dataset(format!("camera {id}: frames differ in size")));
        }
        let [fx, fy, cx, cy] = cam.intrinsics()?;
        let (sx, sy) = (w as f64 / cam.width as f64, h as f64 / cam.height as f64);
        cameras.push(ManifestCamera {
            id: *id,
            width: w,
            height: h,
            intrinsics: [fx * sx, fy * sy, cx * sx, cy * sy],
        });
    }

    let sparse_dir = out_dir.join("sparse");
    write_colmap_text(
        &sparse_dir,
        &ColmapModel {
            cameras: cameras
                .iter()
                .map(|c| (c.id, ColmapCamera::pinhole(c.id, c.width, c.height, c.intrinsics)))
                .collect(),
            images: model
                .images
                .iter()
                .map(|im| ColmapImage {
                    name: png_name(&im.name),
                    ..im.clone()
                })
                .collect(),
            points: model.points.clone(),
        },
    )?;

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        downsample: factor,
        train_fraction: DEFAULT_TRAIN_FRACTION,
        sparse: Some("sparse".into()),
        background: [0.0; 3],
        cameras,
        frames: model
            .images
            .iter()
            .zip(&split)
            .map(|(im, &split)| FrameRecord {
                image: format!("images/{}", png_name(&im.name)),
                camera_id: im.camera_id,
                qvec: im.qvec,
                tvec: im.tvec,
                split,
            })
            .collect(),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn png_name(name: &str) -> String {
    let p = PathBuf::from(name);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let flat = p
        .parent()
        .map(|d| d.to_string_lossy().replace(['/', '\\'], "_"))
        .filter(|d| !d.is_empty())
        .map_or(stem.clone(), |d| format!("{d}_{stem}"));
    format!("{flat}.png")
}

/// Loads a prepared dataset. Masks come from the alpha channel; frames without
/// alpha have none.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let views: Vec<(Split, View)> = manifest
        .frames
        .par_iter()
        .map(|f| {
            let frame = load_rgba(&root.join(&f.image), 1, false)?;
            let camera = manifest.camera_view(f)?;
            Ok((f.split, View::new(f.image.clone(), camera, frame.rgb, frame.mask)?))
        })
        .collect::<Result<_>>()?;
    let points: Vec<SparsePoint> = match &manifest.sparse {
        Some(dir) => load_colmap_text(&root.join(dir))?.points,
        None => Vec::new(),
    };
    let mut ds = Dataset {
        points,
        background: manifest.background,
        ..Default::default()
    };
    for (split, view) in views {
        match split {
            Split::Train => ds.train.push(view),
            Split::Test => ds.test.push(view),
        }
    }
    Ok(ds)
}
