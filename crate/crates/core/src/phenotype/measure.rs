use nalgebra::{Matrix2, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::GaussianScene;

/// Centers of the splats whose activated opacity reaches `opacity_min`.
pub fn extract_points(scene: &GaussianScene, opacity_min: f64) -> Result<Vec<[f64; 3]>> {
    let pts: Vec<[f64; 3]> = scene
        .splats
        .iter()
        .filter(|s| s.opacity() >= opacity_min)
        .map(|s| s.position)
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyCloud(format!(
            "no splat among {} reaches opacity {opacity_min}",
            scene.len()
        )));
    }
    Ok(pts)
}

/// Centimeters per reconstruction unit.
pub fn compute_scale(cube_edge_measured: f64, true_edge_cm: f64) -> Result<f64> {
    if !(cube_edge_measured > 0.0 && cube_edge_measured.is_finite()) {
        return Err(Error::Estimation(format!("cube edge {cube_edge_measured} is not positive")));
    }
    if !(true_edge_cm > 0.0) {
        return Err(Error::InvalidParameter(format!("true cube edge {true_edge_cm} cm is not positive")));
    }
    Ok(true_edge_cm / cube_edge_measured)
}

fn unit(up: [f64; 3]) -> Result<Vector3<f64>> {
    let u = Vector3::from(up);
    let n = u.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter("up axis must be a non-zero vector".into()));
    }
    Ok(u / n)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Extent along `up` times `scale`. With `robust_percentile = Some(p)` the
/// extent runs from the p-th to the (100 - p)-th percentile.
pub fn plant_height(points: &[[f64; 3]], scale: f64, up: [f64; 3], robust_percentile: Option<f64>) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyCloud("plant cluster is empty".into()));
    }
    let u = unit(up)?;
    let mut h: Vec<f64> = points.iter().map(|p| Vector3::from(*p).dot(&u)).collect();
    let extent = match robust_percentile {
        Some(p) => {
            h.sort_by(f64::total_cmp);
            percentile(&h, 100.0 - p) - percentile(&h, p)
        }
        None => {
            let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        }
    };
    Ok(scale * extent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrownWidth {
    pub width1_cm: f64,
    pub width2_cm: f64,
    /// World directions of the major and minor ground-plane axes.
    pub axes: [[f64; 3]; 2],
}

/// Ground-plane footprint measured along the principal axes of the points
/// projected orthogonally to `up`.
pub fn crown_width(points: &[[f64; 3]], scale: f64, up: [f64; 3]) -> Result<CrownWidth> {
    if points.len() < 3 {
        return Err(Error::Estimation(format!("crown width needs 3 points, got {}", points.len())));
    }
    let u = unit(up)?;
    // Orthonormal basis (e1, e2) of the ground plane.
    let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - u * u.dot(&helper)).normalize();
    let e2 = u.cross(&e1);
    let proj: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let v = Vector3::from(*p);
            Vector2::new(v.dot(&e1), v.dot(&e2))
        })
        .collect();
    let mean = proj.iter().sum::<Vector2<f64>>() / proj.len() as f64;
    let mut cov = Matrix2::zeros();
    for p in &proj {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= proj.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (l1, l2) = (eig.eigenvalues[major], eig.eigenvalues[minor]);
    if !(l2 > 1e-12 * l1.max(f64::MIN_POSITIVE)) {
        return Err(Error::Estimation(format!(
            "ground projection is collinear (variances {l1:.3e}, {l2:.3e}) over {} points",
            proj.len()
        )));
    }
    let width = |k: usize| {
        let axis: Vector2<f64> = eig.eigenvectors.column(k).into_owned();
        let (lo, hi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let t = p.dot(&axis);
            (lo.min(t), hi.max(t))
        });
        let world = e1 * axis.x + e2 * axis.y;
        (scale * (hi - lo), [world.x, world.y, world.z])
    };
    let (mut w1, mut a1) = width(major);
    let (mut w2, mut a2) = width(minor);
    // Near-round footprints can rank the axes by variance one way and by
    // extent the other; width1 is always the larger extent.
    if w2 > w1 {
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut a1, &mut a2);
    }
    Ok(CrownWidth {
        width1_cm: w1,
        width2_cm: w2,
        axes: [a1, a2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianSplat;

    #[test]
    fn opacity_filter() {
        let mk = |o: f64, x: f64| GaussianSplat::isotropic([x, 0.0, 0.0], 0.1, o, [0.5; 3], 0);
        let scene = GaussianScene::from_splats(0, vec![mk(0.9, 0.0), mk(0.2, 1.0), mk(0.6, 2.0)]).unwrap();
        assert_eq!(extract_points(&scene, 0.5).unwrap(), vec![[0.0; 3], [2.0, 0.0, 0.0]]);
        let faint = GaussianScene::from_splats(0, vec![mk(0.1, 0.0)]).unwrap();
        assert!(matches!(extract_points(&faint, 0.5), Err(Error::EmptyCloud(_))));
    }

    #[test]
    fn scale_fixtures() {
        assert_eq!(compute_scale(0.2, 10.0).unwrap(), 50.0);
        assert_eq!(compute_scale(10.0, 10.0).unwrap(), 1.0);
        assert!(compute_scale(0.0, 10.0).is_err());
    }

    #[test]
    fn height_fixtures() {
        let z = [0.0, 0.0, 1.0];
        assert!((plant_height(&[[0.0; 3], [0.0, 0.0, 0.3]], 50.0, z, None).unwrap() - 15.0).abs() < 1e-12);
        assert_eq!(plant_height(&[[1.0, 2.0, 3.0]], 50.0, z, None).unwrap(), 0.0);
        assert!(plant_height(&[], 50.0, z, None).is_err());
    }

    #[test]
    fn rectangle_widths() {
        let mut pts = Vec::new();
        for i in 0..=20 {
            for j in 0..=10 {
                pts.push([i as f64 * 0.02, j as f64 * 0.02, 0.0]);
            }
        }
        let w = crown_width(&pts, 50.0, [0.0, 0.0, 1.0]).unwrap();
        assert!((w.width1_cm - 20.0).abs() < 1e-9 && (w.width2_cm - 10.0).abs() < 1e-9);
        let line: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(crown_width(&line, 1.0, [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn widths_ranked_by_extent() {
        // Most variance along y, widest along x.
        let mut pts = vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        for _ in 0..20 {
            pts.push([0.0, 0.8, 0.0]);
            pts.push([0.0, -0.8, 0.0]);
        }
        let w = crown_width(&pts, 10.0, [0.0, 0.0, 1.0]).unwrap();
        assert!((w.width1_cm - 20.0).abs() < 1e-9 && (w.width2_cm - 16.0).abs() < 1e-9);
        assert!(w.axes[0][0].abs() > 0.999);
    }
}
