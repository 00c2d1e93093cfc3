//! In-memory posed image collections consumed by training and evaluation.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::CameraView;

/// One posed photograph.
#[derive(Debug, Clone)]
pub struct View {
    pub id: String,
    pub camera: CameraView,
    /// Linear RGB in [0, 1].
    pub image: Image,
    /// Binary foreground mask, single channel.
    pub mask: Option<Image>,
}

impl View {
    pub fn new(id: impl Into<String>, camera: CameraView, image: Image, mask: Option<Image>) -> Result<Self> {
        let id = id.into();
        if image.channels() != 3 || image.width() != camera.width || image.height() != camera.height {
            return Err(Error::DimensionMismatch(format!(
                "view {id}: image {}x{}x{} for a {}x{} camera",
                image.width(),
                image.height(),
                image.channels(),
                camera.width,
                camera.height
            )));
        }
        if let Some(m) = &mask {
            if m.channels() != 1 || m.width() != image.width() || m.height() != image.height() {
                return Err(Error::DimensionMismatch(format!("view {id}: mask does not match the image")));
            }
        }
        Ok(Self { id, camera, image, mask })
    }

    /// Foreground test for a pixel; views without a mask count everything as foreground.
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.get(x, y, 0) >= 0.5)
    }
}

/// Sparse structure-from-motion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<View>,
    pub test: Vec<View>,
    pub points: Vec<SparsePoint>,
    /// Color the ground-truth images were composited on.
    pub background: [f64; 3],
}

impl Dataset {
    pub fn all_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().chain(&self.test)
    }

    /// Mean camera center and the radius enclosing all training centers, grown by 10%.
    pub fn camera_extent(&self) -> ([f64; 3], f64) {
        let centers: Vec<_> = self.train.iter().map(|v| v.camera.center()).collect();
        if centers.is_empty() {
            return ([0.0; 3], 1.0);
        }
        let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
        let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        let radius = if radius > 0.0 { radius * 1.1 } else { 1.0 };
        ([mean.x, mean.y, mean.z], radius)
    }
}
