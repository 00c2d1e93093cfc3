//! Oriented bounding boxes.
//!
//! Principal axes alone are unreliable for box-like clouds (a cube's surface
//! has an isotropic covariance), so the PCA frame only seeds a search over
//! rotations that minimizes box volume.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: [f64; 3],
    /// Unit axes, ordered by decreasing extent.
    pub axes: [[f64; 3]; 3],
    /// Full side lengths along `axes`.
    pub extents: [f64; 3],
}

impl Obb {
    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn diagonal(&self) -> f64 {
        self.extents.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn min_extent(&self) -> f64 {
        self.extents[2]
    }

    pub fn max_extent(&self) -> f64 {
        self.extents[0]
    }

    /// Smallest over largest side.
    pub fn aspect(&self) -> f64 {
        if self.extents[0] > 0.0 {
            self.extents[2] / self.extents[0]
        } else {
            1.0
        }
    }
}

pub(crate) fn centroid(points: &[[f64; 3]]) -> Vector3<f64> {
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p));
    sum / points.len().max(1) as f64
}

pub(crate) fn covariance(points: &[[f64; 3]], mean: &Vector3<f64>) -> Matrix3<f64> {
    let mut c = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        c += d * d.transpose();
    }
    c / points.len().max(1) as f64
}

/// Eigenvectors as matrix columns, ordered by decreasing eigenvalue.
pub(crate) fn principal_axes(cov: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 3]) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Matrix3::zeros();
    for (k, &o) in order.iter().enumerate() {
        axes.set_column(k, &eig.eigenvectors.column(o));
    }
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    (axes, order.map(|o| eig.eigenvalues[o]))
}

/// Per-axis `(min, max)` of the projections; axes are matrix rows.
fn span(points: &[[f64; 3]], frame: &Matrix3<f64>, origin: &Vector3<f64>) -> [(f64, f64); 3] {
    let mut out = [(f64::INFINITY, f64::NEG_INFINITY); 3];
    for p in points {
        let q = frame * (Vector3::from(*p) - origin);
        for k in 0..3 {
            out[k].0 = out[k].0.min(q[k]);
            out[k].1 = out[k].1.max(q[k]);
        }
    }
    out
}

fn volume(points: &[[f64; 3]], frame: &Matrix3<f64>, origin: &Vector3<f64>) -> f64 {
    span(points, frame, origin).iter().map(|(lo, hi)| hi - lo).product()
}

fn rotate_about(frame: &Matrix3<f64>, axis: usize, angle: f64) -> Matrix3<f64> {
    let unit = Unit::new_normalize(Vector3::ith(axis, 1.0));
    // Rotating the rows rotates the box about its own `axis`.
    Rotation3::from_axis_angle(&unit, angle).matrix() * frame
}

fn descend(points: &[[f64; 3]], mut frame: Matrix3<f64>, origin: &Vector3<f64>) -> (Matrix3<f64>, f64) {
    let mut best = volume(points, &frame, origin);
    for _ in 0..8 {
        let start = best;
        for axis in 0..3 {
            // Coarse scan over a quarter turn, then shrink the step around the minimum.
            let mut best_angle = 0.0;
            for s in -22..=22 {
                let a = (s as f64 * 2.0).to_radians();
                let v = volume(points, &rotate_about(&frame, axis, a), origin);
                if v < best {
                    best = v;
                    best_angle = a;
                }
            }
            let mut step = 1f64.to_radians();
            while step > 1e-12 {
                let mut moved = false;
                for a in [best_angle - step, best_angle + step] {
                    let v = volume(points, &rotate_about(&frame, axis, a), origin);
                    if v < best {
                        best = v;
                        best_angle = a;
                        moved = true;
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
            frame = rotate_about(&frame, axis, best_angle);
        }
        if !(best < start * (1.0 - 1e-12)) {
            break;
        }
    }
    (frame, best)
}

/// Fixed start orientations relative to the principal frame.
fn seeds() -> Vec<Matrix3<f64>> {
    let mut out = vec![Matrix3::identity()];
    let q = std::f64::consts::FRAC_PI_4;
    for (ax, ang) in [(0, q), (1, q), (2, q), (0, q / 2.0), (1, q / 2.0), (2, q / 2.0)] {
        out.push(*Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::ith(ax, 1.0)), ang).matrix());
    }
    out.push(*Rotation3::from_euler_angles(0.5, 0.3, 0.7).matrix());
    out.push(*Rotation3::from_euler_angles(-0.4, 0.6, -0.2).matrix());
    out
}

/// Principal-axes box without refinement.
pub fn pca_obb(points: &[[f64; 3]]) -> Obb {
    let c = centroid(points);
    let (axes, _) = principal_axes(&covariance(points, &c));
    finish(points, &axes.transpose(), &c)
}

/// Near minimum-volume box, seeded from the principal frame.
pub fn fit_obb(points: &[[f64; 3]]) -> Obb {
    let c = centroid(points);
    if points.len() < 2 {
        return finish(points, &Matrix3::identity(), &c);
    }
    let (axes, _) = principal_axes(&covariance(points, &c));
    let base = axes.transpose();
    let mut best: Option<(Matrix3<f64>, f64)> = None;
    for seed in seeds() {
        let (frame, v) = descend(points, seed * base, &c);
        if best.as_ref().is_none_or(|(_, bv)| v < *bv * (1.0 - 1e-9)) {
            best = Some((frame, v));
        }
    }
    finish(points, &best.expect("seeds are non-empty").0, &c)
}

fn finish(points: &[[f64; 3]], frame: &Matrix3<f64>, origin: &Vector3<f64>) -> Obb {
    let s = span(points, frame, origin);
    let mut order = [0, 1, 2];
    let ext = s.map(|(lo, hi)| if hi >= lo { hi - lo } else { 0.0 });
    order.sort_by(|&a, &b| ext[b].total_cmp(&ext[a]).then(a.cmp(&b)));
    let mid = Vector3::new((s[0].0 + s[0].1) / 2.0, (s[1].0 + s[1].1) / 2.0, (s[2].0 + s[2].1) / 2.0);
    let center = origin + frame.transpose() * mid;
    Obb {
        center: [center.x, center.y, center.z],
        axes: order.map(|k| [frame[(k, 0)], frame[(k, 1)], frame[(k, 2)]]),
        extents: order.map(|k| ext[k]),
    }
}
