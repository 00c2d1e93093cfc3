use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{sh, unit_quaternion_to_matrix, CameraView, GaussianScene, GaussianSplat};

use super::{invert_sym2, RasterOptions, Splat2D, LOW_PASS};

/// Projection of one splat together with the intermediates its gradient needs.
#[derive(Debug, Clone)]
pub struct Projection {
    pub splat: Splat2D,
    pub p_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    /// Camera-space x and y the Jacobian was evaluated at, and whether each
    /// was clamped to the guard band.
    pub jacobian_at: [f64; 2],
    pub clamped: [bool; 2],
    /// Covariance rotated into camera space (before the perspective Jacobian).
    pub cov_cam: Matrix3<f64>,
    /// Rotation of the Gaussian itself, from its normalized quaternion.
    pub rotation: Matrix3<f64>,
    pub scales: [f64; 3],
    /// Unit direction from camera center to splat center and its length.
    pub view_dir: [f64; 3],
    pub view_dist: f64,
    /// SH color before clamping at zero.
    pub color_raw: [f64; 3],
    /// SH degree the color was evaluated at.
    pub sh_degree: usize,
}

const GUARD_BAND: f64 = 0.3;

/// Mahalanobis radius at which a splat of the given opacity falls to `cutoff`.
/// `None` when the splat never reaches the cutoff.
pub fn footprint_radius(opacity: f64, cutoff: f64) -> Option<f64> {
    if !(opacity >= cutoff) {
        return None;
    }
    Some((2.0 * (opacity / cutoff).ln()).sqrt())
}

/// EWA projection of one splat into screen space.
pub fn project_gaussian(splat: &GaussianSplat, camera: &CameraView, sh_degree: usize) -> Result<Splat2D> {
    Ok(project_full(splat, 0, camera, sh_degree)?.splat)
}

pub(crate) fn project_full(
    splat: &GaussianSplat,
    index: usize,
    camera: &CameraView,
    sh_degree: usize,
) -> Result<Projection> {
    let mean = Vector3::from(splat.position);
    let p_cam = camera.to_camera(&mean);
    if !(p_cam.z > 0.0) {
        return Err(Error::Projection(format!(
            "splat {index} has non-positive camera depth {}",
            p_cam.z
        )));
    }
    let q = crate::scene::normalize_quaternion(splat.rotation)?;
    let rotation = unit_quaternion_to_matrix(q);
    let scales = splat.scales();
    let m = rotation * Matrix3::from_diagonal(&Vector3::from(scales));
    let cov_world = m * m.transpose();
    let w = camera.rotation;
    let cov_cam = w * cov_world * w.transpose();

    // The affine approximation is evaluated no further out than 30% of the
    // half field of view beyond the image edge.
    let clamp = |t: f64, c: f64, f: f64, size: usize| {
        let band = GUARD_BAND * 0.5 * size as f64 / f;
        let (lo, hi) = (-(c / f + band), (size as f64 - c) / f + band);
        let u = t / p_cam.z;
        (u.clamp(lo, hi) * p_cam.z, !(lo..=hi).contains(&u))
    };
    let (tx, cx_clamped) = clamp(p_cam.x, camera.cx, camera.fx, camera.width);
    let (ty, cy_clamped) = clamp(p_cam.y, camera.cy, camera.fy, camera.height);
    let tz = p_cam.z;
    let jacobian = Matrix2x3::new(
        camera.fx / tz,
        0.0,
        -camera.fx * tx / (tz * tz),
        0.0,
        camera.fy / tz,
        -camera.fy * ty / (tz * tz),
    );
    let cov2: Matrix2<f64> = jacobian * cov_cam * jacobian.transpose();
    let cov2d = [
        cov2[(0, 0)] + LOW_PASS,
        0.5 * (cov2[(0, 1)] + cov2[(1, 0)]),
        cov2[(1, 1)] + LOW_PASS,
    ];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Projection(format!("splat {index} has a degenerate screen covariance")));
    }

    let offset = mean - camera.center();
    let (view_dir, view_dist) = sh::normalize_direction([offset.x, offset.y, offset.z])
        .map_err(|_| Error::Projection(format!("splat {index} coincides with the camera center")))?;
    let degree = sh_degree.min(sh::degree_from_coeff_count(splat.sh.len()).unwrap_or(0));
    let b = sh::basis(degree, view_dir);
    let mut color_raw = [0.5; 3];
    for (k, coeff) in splat.sh.iter().take(sh::coeff_count(degree)).enumerate() {
        for c in 0..3 {
            color_raw[c] += b[k] * coeff[c];
        }
    }

    let splat2d = Splat2D {
        index,
        mean2d: camera.project(&p_cam),
        cov2d,
        conic: invert_sym2(cov2d),
        depth: tz,
        color: color_raw.map(|v| v.max(0.0)),
        opacity: splat.opacity(),
    };
    Ok(Projection {
        splat: splat2d,
        p_cam,
        jacobian,
        jacobian_at: [tx, ty],
        clamped: [cx_clamped, cy_clamped],
        cov_cam,
        rotation,
        scales,
        view_dir,
        view_dist,
        color_raw,
        sh_degree: degree,
    })
}

/// Cull predicate on an already projected splat.
pub(crate) fn in_view(s: &Splat2D, camera: &CameraView, margin: f64, cutoff: f64) -> bool {
    let Some([ex, ey]) = s.half_extent(cutoff) else {
        return false;
    };
    let [mx, my] = s.mean2d;
    mx.is_finite()
        && my.is_finite()
        && mx >= -margin * ex
        && mx <= camera.width as f64 + margin * ex
        && my >= -margin * ey
        && my <= camera.height as f64 + margin * ey
}

/// Projects every splat in front of the near plane and keeps those whose
/// footprint can reach the image, in scene order.
pub(crate) fn cull_and_project(
    scene: &GaussianScene,
    camera: &CameraView,
    options: &RasterOptions,
) -> Vec<Projection> {
    let degree = options.active_degree(scene);
    let cutoff = options.contribution_cutoff();
    scene
        .splats
        .iter()
        .enumerate()
        .filter_map(|(i, splat)| {
            let z = camera.to_camera(&Vector3::from(splat.position)).z;
            if !(z > options.near) {
                return None;
            }
            let p = project_full(splat, i, camera, degree).ok()?;
            in_view(&p.splat, camera, options.cull_margin, cutoff).then_some(p)
        })
        .collect()
}

/// Indices of splats beyond the near plane whose projected mean lies inside the
/// image grown by `cull_margin` footprint radii.
pub fn frustum_cull(scene: &GaussianScene, camera: &CameraView, options: &RasterOptions) -> Vec<usize> {
    cull_and_project(scene, camera, options)
        .into_iter()
        .map(|p| p.splat.index)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianSplat;

    fn axis_camera(fx: f64, fy: f64) -> CameraView {
        CameraView::new(fx, fy, 16.0, 12.0, 32, 24, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn on_axis_mean_projects_to_principal_point() {
        let s = GaussianSplat::isotropic([0.0, 0.0, 3.0], 0.1, 0.5, [0.2; 3], 0);
        let p = project_gaussian(&s, &axis_camera(40.0, 30.0), 0).unwrap();
        assert_eq!(p.mean2d, [16.0, 12.0]);
        assert_eq!(p.depth, 3.0);
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        let (sigma, d, fx, fy) = (0.05, 2.0, 40.0, 30.0);
        let s = GaussianSplat::isotropic([0.0, 0.0, d], sigma, 0.5, [0.2; 3], 0);
        let p = project_gaussian(&s, &axis_camera(fx, fy), 0).unwrap();
        let ex = sigma * sigma * fx * fx / (d * d) + 0.3;
        let ey = sigma * sigma * fy * fy / (d * d) + 0.3;
        assert!((p.cov2d[0] - ex).abs() < 1e-12);
        assert!(p.cov2d[1].abs() < 1e-12);
        assert!((p.cov2d[2] - ey).abs() < 1e-12);
    }

    #[test]
    fn doubling_focal_doubles_x_extent() {
        // Without dilation the x standard deviation scales linearly with fx.
        let s = GaussianSplat::isotropic([0.0, 0.0, 2.0], 0.2, 0.5, [0.2; 3], 0);
        let a = project_gaussian(&s, &axis_camera(40.0, 30.0), 0).unwrap();
        let b = project_gaussian(&s, &axis_camera(80.0, 30.0), 0).unwrap();
        let sx = |p: &Splat2D| 3.0 * (p.cov2d[0] - LOW_PASS).sqrt();
        assert!((sx(&b) / sx(&a) - 2.0).abs() < 1e-12);
        assert!((b.cov2d[2] - a.cov2d[2]).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let s = GaussianSplat::isotropic([0.0, 0.0, -1.0], 0.1, 0.5, [0.2; 3], 0);
        assert!(matches!(
            project_gaussian(&s, &axis_camera(40.0, 30.0), 0),
            Err(Error::Projection(_))
        ));
    }

    #[test]
    fn cull_keeps_center_and_drops_behind() {
        let scene = GaussianScene::from_splats(
            0,
            vec![
                GaussianSplat::isotropic([0.0, 0.0, -1.0], 0.1, 0.9, [0.2; 3], 0),
                GaussianSplat::isotropic([0.0, 0.0, 1.0], 0.1, 0.9, [0.2; 3], 0),
            ],
        )
        .unwrap();
        let kept = frustum_cull(&scene, &axis_camera(40.0, 30.0), &RasterOptions::default());
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn footprint_radius_reaches_cutoff() {
        let r = footprint_radius(0.8, 1.0 / 255.0).unwrap();
        assert!((0.8 * (-0.5 * r * r).exp() - 1.0 / 255.0).abs() < 1e-15);
        assert!(footprint_radius(0.001, 1.0 / 255.0).is_none());
    }
}
