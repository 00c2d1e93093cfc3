//! Small randomized scenes and cameras for property tests and fuzzing.

use rand::Rng;

use crate::scene::{sh, CameraView, GaussianScene, GaussianSplat};

/// Splats scattered in `[-extent, extent]³` with random anisotropic shapes,
/// unnormalized rotations, opacities in roughly (0.1, 0.9) and random SH.
pub fn random_scene(rng: &mut impl Rng, count: usize, sh_degree: usize, extent: f64) -> GaussianScene {
    let splats = (0..count)
        .map(|_| {
            let position = std::array::from_fn(|_| rng.random_range(-extent..extent));
            let rotation = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let log_scale =
                std::array::from_fn(|_| rng.random_range((0.06 * extent).ln()..(0.35 * extent).ln()));
            let mut coeffs = vec![[0.0; 3]; sh::coeff_count(sh_degree)];
            for (k, c) in coeffs.iter_mut().enumerate() {
                let amp = if k == 0 { 1.2 } else { 0.3 };
                *c = std::array::from_fn(|_| rng.random_range(-amp..amp));
            }
            GaussianSplat {
                position,
                rotation,
                log_scale,
                opacity_logit: rng.random_range(-2.0..2.2),
                sh: coeffs,
            }
        })
        .collect();
    GaussianScene::from_splats(sh_degree, splats).expect("degree within range")
}

/// Camera on a sphere of radius `distance` looking at the origin, with a
/// field of view that frames roughly `[-0.6 d/3, 0.6 d/3]` around it.
pub fn random_camera(rng: &mut impl Rng, width: usize, height: usize, distance: f64) -> CameraView {
    loop {
        let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if !(0.2..=1.0).contains(&n) || dir[2].abs() > 0.9 * n {
            continue;
        }
        let eye = dir.map(|v| v / n * distance);
        let f = 2.5 * width.max(height) as f64;
        let intrinsics = [f, f, width as f64 / 2.0, height as f64 / 2.0];
        if let Ok((cam, _)) = CameraView::look_at(intrinsics, width, height, eye, [0.0; 3], [0.0, 0.0, 1.0]) {
            return cam;
        }
    }
}
