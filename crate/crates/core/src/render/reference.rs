use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{CameraView, GaussianScene};

use super::project::project_full;
use super::raster::depth_order;
use super::{RenderOutput, Splat2D, ALPHA_MAX};

pub const DEFAULT_ORACLE_LIMIT: usize = 10_000;
const UNDERFLOW_POWER: f64 = 800.0;

/// Exhaustive renderer: every splat in front of `near` is evaluated at every
/// pixel in global depth order, with the α′ clamp as the only approximation.
pub fn render_reference(
    scene: &GaussianScene,
    camera: &CameraView,
    background: [f64; 3],
    sh_degree: usize,
    near: f64,
    limit: usize,
) -> Result<RenderOutput> {
    if scene.len() > limit {
        return Err(Error::OracleLimit {
            count: scene.len(),
            limit,
        });
    }
    camera.validate()?;
    let degree = sh_degree.min(scene.sh_degree());
    let mut splats: Vec<Splat2D> = Vec::new();
    for (i, splat) in scene.splats.iter().enumerate() {
        if camera.to_camera(&Vector3::from(splat.position)).z > near {
            splats.push(project_full(splat, i, camera, degree)?.splat);
        }
    }
    let order = depth_order(&splats);
    let sorted: Vec<&Splat2D> = order.iter().map(|&k| &splats[k]).collect();

    // Beyond a Mahalanobis power of 800 exp() is exactly zero in f64, so a
    // splat outside this box contributes nothing and can be skipped.
    let boxes: Vec<[f64; 4]> = sorted
        .iter()
        .map(|s| {
            let rx = (2.0 * UNDERFLOW_POWER * s.cov2d[0]).sqrt();
            let ry = (2.0 * UNDERFLOW_POWER * s.cov2d[2]).sqrt();
            [s.mean2d[0] - rx, s.mean2d[0] + rx, s.mean2d[1] - ry, s.mean2d[1] + ry]
        })
        .collect();
    let rows: Vec<Vec<([f64; 3], f64)>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let py = y as f64 + 0.5;
            let live: Vec<usize> = (0..sorted.len()).filter(|&k| boxes[k][2] <= py && py <= boxes[k][3]).collect();
            (0..camera.width)
                .map(|x| {
                    let px = x as f64 + 0.5;
                    let mut t = 1.0;
                    let mut color = [0.0; 3];
                    for &k in &live {
                        if px < boxes[k][0] || px > boxes[k][1] {
                            continue;
                        }
                        let s = sorted[k];
                        let alpha = s.raw_alpha(px, py).min(ALPHA_MAX);
                        for c in 0..3 {
                            color[c] += s.color[c] * alpha * t;
                        }
                        t *= 1.0 - alpha;
                    }
                    (color, t)
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput::new(camera.width, camera.height, background);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (color, t)) in row.into_iter().enumerate() {
            out.write_pixel(x, y, color, t);
        }
    }
    Ok(out)
}
