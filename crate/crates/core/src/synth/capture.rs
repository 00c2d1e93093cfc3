//! Ground-truth frames of a synthetic scene from cameras on horizontal rings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::SparsePoint;
use crate::error::Result;
use crate::image::Image;
use crate::render::render_reference;
use crate::scene::{sh, CameraView};

use super::plant::{generate_scene, SynthScene, SynthSpec};

/// One rendered frame with its pose in the form it is exported.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub name: String,
    pub camera: CameraView,
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    /// RGB on a black background.
    pub image: Image,
    /// Binary foreground mask.
    pub mask: Image,
}

#[derive(Debug, Clone)]
pub struct SynthCapture {
    pub spec: SynthSpec,
    pub scene: SynthScene,
    pub frames: Vec<SynthFrame>,
    /// Subsample of the object splat centers standing in for sparse SfM points.
    pub points: Vec<SparsePoint>,
    /// Shared pinhole intrinsics `[fx, fy, cx, cy]`.
    pub intrinsics: [f64; 4],
}

pub const MASK_THRESHOLD: f64 = 0.5;

/// Camera poses on `spec.ring_heights`, all aimed at the scene focus.
pub fn ring_cameras(spec: &SynthSpec, focus: [f64; 3]) -> Result<Vec<(CameraView, [f64; 4])>> {
    let f = 0.5 * spec.width as f64 / (0.5 * spec.fov_deg.to_radians()).tan();
    let intrinsics = [f, f, spec.width as f64 / 2.0, spec.height as f64 / 2.0];
    let mut out = Vec::new();
    for (ring, &z) in spec.ring_heights.iter().enumerate() {
        for k in 0..spec.cameras_per_ring {
            // Rings are staggered so no two cameras share an azimuth.
            let t = std::f64::consts::TAU * (k as f64 + ring as f64 / spec.ring_heights.len() as f64)
                / spec.cameras_per_ring as f64;
            let eye = [
                focus[0] + spec.ring_radius * t.cos(),
                focus[1] + spec.ring_radius * t.sin(),
                z,
            ];
            out.push(CameraView::look_at(intrinsics, spec.width, spec.height, eye, focus, [0.0, 0.0, 1.0])?);
        }
    }
    Ok(out)
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<SynthCapture> {
    let scene = generate_scene(spec)?;
    let matte = scene.visibility_matte();
    let cams = ring_cameras(spec, scene.focus())?;
    let limit = scene.scene.len().max(1);
    let degree = spec.sh_degree;
    let frames = cams
        .par_iter()
        .enumerate()
        .map(|(i, (cam, qvec))| {
            let image = render_reference(&scene.scene, cam, [0.0; 3], degree, 1e-3, limit)?.rgb;
            // Foreground share of each pixel, with occlusion by clutter.
            let cover = render_reference(&matte, cam, [0.0; 3], 0, 1e-3, limit)?.rgb.channel(0);
            let mask = cover.map(|a| if a > MASK_THRESHOLD { 1.0 } else { 0.0 });
            let t = cam.translation;
            Ok(SynthFrame {
                name: format!("frame_{i:03}.png"),
                camera: cam.clone(),
                qvec: *qvec,
                tvec: [t.x, t.y, t.z],
                image,
                mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5350_4152_5345);
    let points = scene
        .scene
        .splats
        .iter()
        .filter(|_| rng.random_range(0.0..1.0) < spec.sparse_fraction)
        .map(|s| SparsePoint {
            position: s.position,
            color: s.sh[0].map(|d| (sh::dc_to_rgb(d)).clamp(0.0, 1.0)),
        })
        .collect();
    let intrinsics = {
        let c = &frames[0].camera;
        [c.fx, c.fy, c.cx, c.cy]
    };
    Ok(SynthCapture {
        spec: spec.clone(),
        scene,
        frames,
        points,
        intrinsics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::plant::Membership;

    #[test]
    fn twelve_frames_with_masks() {
        let spec = SynthSpec { clutter: 60, width: 32, height: 32, ..Default::default() };
        let cap = generate_dataset(&spec).unwrap();
        assert_eq!(cap.frames.len(), 12);
        for f in &cap.frames {
            let fg = f.mask.data().iter().filter(|&&m| m == 1.0).count();
            assert!(fg > 20 && fg < f.mask.pixel_count(), "{} foreground pixels", fg);
        }
        assert!(cap.scene.membership.contains(&Membership::Clutter));
    }

    #[test]
    fn clutter_only_pixels_are_background() {
        let spec = SynthSpec { clutter: 200, width: 32, height: 32, ..Default::default() };
        let cap = generate_dataset(&spec).unwrap();
        let clutter_only = {
            let mut s = cap.scene.scene.clone();
            s.splats = s
                .splats
                .iter()
                .zip(&cap.scene.membership)
                .filter(|(_, m)| !m.is_foreground())
                .map(|(s, _)| s.clone())
                .collect();
            s
        };
        let fg = cap.scene.foreground();
        let mut checked = 0;
        for f in &cap.frames {
            let a_clutter = render_reference(&clutter_only, &f.camera, [0.0; 3], 0, 1e-3, 10_000).unwrap().alpha_acc;
            let a_fg = render_reference(&fg, &f.camera, [0.0; 3], 0, 1e-3, 10_000).unwrap().alpha_acc;
            for i in 0..a_fg.pixel_count() {
                if a_clutter.data()[i] > 0.5 && a_fg.data()[i] == 0.0 {
                    assert_eq!(f.mask.data()[i], 0.0);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn occluded_foreground_is_background() {
        let spec = SynthSpec { width: 32, height: 32, cameras_per_ring: 3, ring_heights: vec![0.3], ..Default::default() };
        let mut scene = generate_scene(&spec).unwrap();
        let cam = ring_cameras(&spec, scene.focus()).unwrap().remove(0).0;
        // An opaque clutter blob halfway between the camera and the focus.
        let c = cam.center();
        let f = scene.focus();
        let mid = [0.5 * (c.x + f[0]), 0.5 * (c.y + f[1]), 0.5 * (c.z + f[2])];
        scene.scene.push(crate::scene::GaussianSplat::isotropic(mid, 0.03, 0.99, [0.2; 3], 0));
        scene.membership.push(Membership::Clutter);
        let cover = render_reference(&scene.visibility_matte(), &cam, [0.0; 3], 0, 1e-3, 100_000).unwrap().rgb;
        let fg = render_reference(&scene.foreground(), &cam, [0.0; 3], 0, 1e-3, 100_000).unwrap().alpha_acc;
        let [u, v] = cam.project(&cam.to_camera(&nalgebra::Vector3::from(mid)));
        let (x, y) = (u as usize, v as usize);
        assert!(fg.get(x, y, 0) > 0.5);
        assert!(cover.get(x, y, 0) < 0.1);
    }
}
