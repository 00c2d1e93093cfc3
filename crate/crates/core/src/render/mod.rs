//! Screen-space projection and depth-ordered alpha compositing.
//!
//! [`render`] runs the tiled pipeline (cull, project, bin, composite) and
//! [`render_reference`] evaluates every splat at every pixel. The two share
//! projection code but nothing downstream of it, which is what makes the
//! reference useful as an oracle for the tiled path.

mod backward;
mod project;
mod raster;
mod reference;

pub use backward::{backward, GradientBuffer};
pub use project::{footprint_radius, frustum_cull, project_gaussian, Projection};
pub use raster::{forward, rasterize, Forward};
pub use reference::{render_reference, DEFAULT_ORACLE_LIMIT};

use crate::error::Result;
use crate::image::Image;
use crate::scene::{CameraView, GaussianScene};

/// Upper clamp on per-pixel opacity.
pub const ALPHA_MAX: f64 = 0.99;
/// Low-pass dilation added to every projected covariance, in px².
pub const LOW_PASS: f64 = 0.3;
/// Default skip threshold for negligible per-pixel contributions.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Default transmittance below which compositing stops.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Footprint truncation used when skipping is disabled.
pub const EXACT_CUTOFF: f64 = 1e-12;

/// Knobs of the tiled rasterizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterOptions {
    pub tile_size: usize,
    /// Contributions with α′ below this are skipped. `None` keeps everything
    /// above [`EXACT_CUTOFF`].
    pub alpha_skip: Option<f64>,
    /// Stop compositing a pixel once transmittance drops below this.
    pub min_transmittance: Option<f64>,
    pub near: f64,
    /// Multiplier on the footprint radius when testing against the image rectangle.
    pub cull_margin: f64,
    /// Active SH degree; `None` uses the scene's full degree.
    pub sh_degree: Option<usize>,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_skip: Some(ALPHA_SKIP),
            min_transmittance: Some(MIN_TRANSMITTANCE),
            near: 0.01,
            cull_margin: 1.0,
            sh_degree: None,
        }
    }
}

impl RasterOptions {
    /// No skipping and no early termination; used for oracle comparisons.
    pub fn exact() -> Self {
        Self {
            alpha_skip: None,
            min_transmittance: None,
            ..Self::default()
        }
    }

    pub fn with_tile_size(mut self, tile_size: usize) -> Self {
        self.tile_size = tile_size;
        self
    }

    pub fn with_sh_degree(mut self, degree: usize) -> Self {
        self.sh_degree = Some(degree);
        self
    }

    /// Smallest α′ that is composited.
    pub fn contribution_cutoff(&self) -> f64 {
        self.alpha_skip.unwrap_or(EXACT_CUTOFF)
    }

    pub(crate) fn active_degree(&self, scene: &GaussianScene) -> usize {
        self.sh_degree.unwrap_or(scene.sh_degree()).min(scene.sh_degree())
    }
}

/// Screen-space Gaussian ready for compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the source splat in its scene.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Symmetric covariance `(xx, xy, yy)` in px², dilation included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Splat2D {
    /// Builds a screen-space splat directly from its 2D covariance.
    pub fn new(index: usize, mean2d: [f64; 2], cov2d: [f64; 3], depth: f64, color: [f64; 3], opacity: f64) -> Self {
        Self {
            index,
            mean2d,
            cov2d,
            conic: invert_sym2(cov2d),
            depth,
            color,
            opacity,
        }
    }

    /// Per-pixel opacity before clamping at pixel center `(px, py)`.
    #[inline]
    pub fn raw_alpha(&self, px: f64, py: f64) -> f64 {
        self.opacity * self.power(px, py).exp()
    }

    #[inline]
    pub(crate) fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    }

    /// Half extents of the axis-aligned box holding every pixel whose α′
    /// reaches `cutoff`.
    pub fn half_extent(&self, cutoff: f64) -> Option<[f64; 2]> {
        let r = footprint_radius(self.opacity, cutoff)?;
        Some([r * self.cov2d[0].sqrt(), r * self.cov2d[2].sqrt()])
    }
}

pub(crate) fn invert_sym2(m: [f64; 3]) -> [f64; 3] {
    let det = m[0] * m[2] - m[1] * m[1];
    [m[2] / det, -m[1] / det, m[0] / det]
}

/// Rendered image plus the quantities of the background compositing identity
/// `rgb = splat_color + (1 - alpha_acc) * background`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub alpha_acc: Image,
    pub splat_color: Image,
    pub background: [f64; 3],
}

impl RenderOutput {
    pub(crate) fn new(width: usize, height: usize, background: [f64; 3]) -> Self {
        Self {
            rgb: Image::new(width, height, 3),
            alpha_acc: Image::new(width, height, 1),
            splat_color: Image::new(width, height, 3),
            background,
        }
    }

    #[inline]
    pub(crate) fn write_pixel(&mut self, x: usize, y: usize, splat_color: [f64; 3], transmittance: f64) {
        let alpha = 1.0 - transmittance;
        self.alpha_acc.set(x, y, 0, alpha);
        for c in 0..3 {
            self.splat_color.set(x, y, c, splat_color[c]);
            self.rgb.set(x, y, c, splat_color[c] + (1.0 - alpha) * self.background[c]);
        }
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

/// Cull, project and rasterize `scene` as seen from `camera`.
pub fn render(
    scene: &GaussianScene,
    camera: &CameraView,
    background: [f64; 3],
    options: &RasterOptions,
) -> Result<RenderOutput> {
    Ok(forward(scene, camera, background, options)?.output)
}
