//! Reverse-mode gradients of the tiled renderer.
//!
//! The pass mirrors [`super::forward`]: per pixel the composited splats are
//! collected front to back, then walked back to front to recover dL/dα′ and
//! dL/dcolor. Screen-space gradients are accumulated per tile and merged in
//! tile order, so results do not depend on the number of worker threads.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{quaternion_backward, sh, CameraView, GaussianScene, OFFSET_LOG_SCALE, OFFSET_OPACITY, OFFSET_POSITION, OFFSET_ROTATION, OFFSET_SH};

use super::project::Projection;
use super::raster::{composite_pixel, Forward};
use super::ALPHA_MAX;

/// Per-splat gradients in the flat parameter layout of [`crate::scene::GaussianSplat`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub stride: usize,
    pub params: Vec<f64>,
    /// Norm of the screen-space mean gradient in normalized device units.
    pub mean2d_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

impl GradientBuffer {
    pub fn zeros(len: usize, stride: usize) -> Self {
        Self {
            stride,
            params: vec![0.0; len * stride],
            mean2d_norm: vec![0.0; len],
            visible: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn splat(&self, i: usize) -> &[f64] {
        &self.params[i * self.stride..(i + 1) * self.stride]
    }

    pub fn splat_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.params[i * self.stride..(i + 1) * self.stride]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// Adds `other` scaled by `weight`; visibility is OR-ed.
    pub fn accumulate(&mut self, other: &GradientBuffer, weight: f64) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += weight * b;
        }
        for (a, b) in self.mean2d_norm.iter_mut().zip(&other.mean2d_norm) {
            *a += weight * b;
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= *b;
        }
    }
}

// Screen-space gradient slots: mean (2), conic (3), color (3), opacity (1).
type ScreenGrad = [f64; 9];

/// Backpropagates `d_rgb` (dL/d rendered rgb) through the forward pass.
pub fn backward(
    scene: &GaussianScene,
    camera: &CameraView,
    forward: &Forward,
    d_rgb: &Image,
) -> Result<GradientBuffer> {
    let (width, height) = (camera.width, camera.height);
    if d_rgb.width() != width || d_rgb.height() != height || d_rgb.channels() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient {}x{}x{} for a {width}x{height} render",
            d_rgb.width(),
            d_rgb.height(),
            d_rgb.channels()
        )));
    }
    let splats = &forward.splats2d;
    let bins = &forward.bins;
    let options = &forward.options;
    let background = forward.output.background;

    let per_tile: Vec<Vec<ScreenGrad>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut acc = vec![[0.0; 9]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let (x0, y0, x1, y1) = bins.tile_rect(tile, width, height);
            let mut hits: Vec<(usize, f64, f64, f64)> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let g = d_rgb.pixel(x, y);
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    hits.clear();
                    composite_pixel(splats, list, px, py, options, |pos, alpha, raw, t| {
                        hits.push((pos, alpha, raw, t))
                    });
                    let mut behind = background;
                    for &(pos, alpha, raw, t) in hits.iter().rev() {
                        let s = &splats[list[pos] as usize];
                        let slot = &mut acc[pos];
                        let w = alpha * t;
                        let mut d_alpha = 0.0;
                        for c in 0..3 {
                            slot[5 + c] += w * g[c];
                            d_alpha += g[c] * (s.color[c] - behind[c]);
                            behind[c] = alpha * s.color[c] + (1.0 - alpha) * behind[c];
                        }
                        d_alpha *= t;
                        if raw >= ALPHA_MAX {
                            continue;
                        }
                        let gauss = raw / s.opacity;
                        slot[8] += d_alpha * gauss;
                        let d_power = d_alpha * raw;
                        let dx = px - s.mean2d[0];
                        let dy = py - s.mean2d[1];
                        let [a, b, c] = s.conic;
                        slot[0] += d_power * (a * dx + b * dy);
                        slot[1] += d_power * (b * dx + c * dy);
                        slot[2] += -0.5 * dx * dx * d_power;
                        slot[3] += -dx * dy * d_power;
                        slot[4] += -0.5 * dy * dy * d_power;
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![[0.0; 9]; splats.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (pos, g) in acc.iter().enumerate() {
            let target = &mut screen[bins.lists[tile][pos] as usize];
            for (t, v) in target.iter_mut().zip(g) {
                *t += v;
            }
        }
    }

    let stride = scene.param_stride();
    let mut out = GradientBuffer::zeros(scene.len(), stride);
    let per_splat: Vec<(usize, Vec<f64>, f64)> = forward
        .projections
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, g)| {
            let mut grad = vec![0.0; stride];
            let norm = splat_backward(scene, camera, p, g, &mut grad);
            (p.splat.index, grad, norm)
        })
        .collect();
    for (index, grad, norm) in per_splat {
        out.splat_mut(index).copy_from_slice(&grad);
        out.mean2d_norm[index] = norm;
        out.visible[index] = true;
    }
    Ok(out)
}

/// Chains screen-space gradients of one splat back to its parameters.
/// Returns the normalized-device norm of the mean gradient.
fn splat_backward(scene: &GaussianScene, camera: &CameraView, p: &Projection, g: &ScreenGrad, out: &mut [f64]) -> f64 {
    let splat = &scene.splats[p.splat.index];
    let opacity = p.splat.opacity;
    out[OFFSET_OPACITY] = g[8] * opacity * (1.0 - opacity);

    let mut d_pos = Vector3::zeros();

    // Color: SH coefficients and the view direction.
    let d_color: [f64; 3] = std::array::from_fn(|c| if p.color_raw[c] < 0.0 { 0.0 } else { g[5 + c] });
    let degree = p.sh_degree;
    let k_active = sh::coeff_count(degree).min(splat.sh.len());
    let basis = sh::basis(degree, p.view_dir);
    for k in 0..k_active {
        for c in 0..3 {
            out[OFFSET_SH + 3 * k + c] = basis[k] * d_color[c];
        }
    }
    if degree > 0 {
        let jac = sh::basis_jacobian(degree, p.view_dir);
        let mut d_dir = Vector3::zeros();
        for k in 1..k_active {
            let w: f64 = (0..3).map(|c| d_color[c] * splat.sh[k][c]).sum();
            d_dir += Vector3::from(jac[k]) * w;
        }
        let dir = Vector3::from(p.view_dir);
        d_pos += (d_dir - dir * dir.dot(&d_dir)) / p.view_dist;
    }

    // Conic back to the dilated screen covariance.
    let [ca, cb, cc] = p.splat.conic;
    let conic = Matrix2::new(ca, cb, cb, cc);
    let d_conic = Matrix2::new(g[2], 0.5 * g[3], 0.5 * g[3], g[4]);
    let d_cov2 = -(conic * d_conic * conic);

    // cov2 = J Σc Jᵀ + λI.
    let j = &p.jacobian;
    let d_cov_cam = j.transpose() * d_cov2 * j;
    let d_j: Matrix2x3<f64> = 2.0 * d_cov2 * j * p.cov_cam;

    let (tx, ty, tz) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
    let (fx, fy) = (camera.fx, camera.fy);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut d_t = Vector3::new(
        g[0] * fx / tz,
        g[1] * fy / tz,
        -g[0] * fx * tx / tz2 - g[1] * fy * ty / tz2,
    );
    d_t.z += -d_j[(0, 0)] * fx / tz2 - d_j[(1, 1)] * fy / tz2;
    // A clamped coordinate enters the Jacobian as a fixed ratio times tz.
    let [jx, jy] = p.jacobian_at;
    if p.clamped[0] {
        d_t.z += d_j[(0, 2)] * fx * jx / tz3;
    } else {
        d_t.x += -d_j[(0, 2)] * fx / tz2;
        d_t.z += d_j[(0, 2)] * 2.0 * fx * jx / tz3;
    }
    if p.clamped[1] {
        d_t.z += d_j[(1, 2)] * fy * jy / tz3;
    } else {
        d_t.y += -d_j[(1, 2)] * fy / tz2;
        d_t.z += d_j[(1, 2)] * 2.0 * fy * jy / tz3;
    }
    let w = camera.rotation;
    d_pos += w.transpose() * d_t;
    out[OFFSET_POSITION..OFFSET_POSITION + 3].copy_from_slice(d_pos.as_slice());

    // Σ = M Mᵀ with M = R diag(s).
    let d_sigma = w.transpose() * d_cov_cam * w;
    let d_sigma = (d_sigma + d_sigma.transpose()) * 0.5;
    let s = Vector3::from(p.scales);
    let m = p.rotation * Matrix3::from_diagonal(&s);
    let d_m = 2.0 * d_sigma * m;
    let mut d_r = Matrix3::zeros();
    for i in 0..3 {
        let mut ds = 0.0;
        for k in 0..3 {
            ds += d_m[(k, i)] * p.rotation[(k, i)];
            d_r[(k, i)] = d_m[(k, i)] * s[i];
        }
        out[OFFSET_LOG_SCALE + i] = ds * s[i];
    }
    out[OFFSET_ROTATION..OFFSET_ROTATION + 4].copy_from_slice(&quaternion_backward(splat.rotation, &d_r));

    let ndc_x = g[0] * camera.width as f64 * 0.5;
    let ndc_y = g[1] * camera.height as f64 * 0.5;
    (ndc_x * ndc_x + ndc_y * ndc_y).sqrt()
}
