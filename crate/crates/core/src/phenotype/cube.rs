use log::warn;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dbscan::LabeledCloud;
use super::obb::{centroid, covariance, fit_obb, principal_axes, Obb};

/// Per-cluster shape summary used to pick the calibration cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub id: usize,
    pub size: usize,
    pub obb: Obb,
    /// Points per (floored) box volume.
    pub density: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeChoice {
    pub cluster: usize,
    pub score: f64,
    /// Another cluster scored within the tie tolerance.
    pub duplicate: bool,
    pub clusters: Vec<ClusterDiagnostics>,
}

/// Sides shorter than this fraction of the longest side are raised to it when
/// computing fill density, so flat clusters do not get unbounded density.
const VOLUME_FLOOR: f64 = 0.05;
const TIE_TOLERANCE: f64 = 1e-9;

pub fn cluster_diagnostics(cloud: &LabeledCloud) -> Vec<ClusterDiagnostics> {
    let mut out: Vec<ClusterDiagnostics> = (0..cloud.cluster_count())
        .map(|id| {
            let pts = cloud.cluster_points(id);
            let obb = fit_obb(&pts);
            let floor = VOLUME_FLOOR * obb.max_extent();
            let vol: f64 = obb.extents.iter().map(|e| e.max(floor)).product();
            let density = if vol > 0.0 { pts.len() as f64 / vol } else { 0.0 };
            ClusterDiagnostics {
                id,
                size: pts.len(),
                obb,
                density,
                score: 0.0,
            }
        })
        .collect();
    let max_density = out.iter().map(|c| c.density).fold(0.0, f64::max);
    for c in &mut out {
        let fill = if max_density > 0.0 { c.density / max_density } else { 0.0 };
        c.score = c.obb.aspect() * fill;
    }
    out
}

/// Picks the most cube-like cluster: squarest box times relative fill density.
pub fn identify_cube(cloud: &LabeledCloud) -> Result<CubeChoice> {
    let count = cloud.cluster_count();
    if count < 2 {
        return Err(Error::Segmentation(format!("need at least 2 clusters, found {count}")));
    }
    let clusters = cluster_diagnostics(cloud);
    let top = clusters.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = clusters
        .iter()
        .filter(|c| (top - c.score).abs() <= TIE_TOLERANCE * top.abs())
        .map(|c| c.id)
        .collect();
    let chosen = tied[0];
    let duplicate = tied.len() > 1;
    if duplicate {
        warn!("several clusters look like the calibration cube; using cluster {chosen}");
    }
    Ok(CubeChoice {
        cluster: chosen,
        score: clusters[chosen].score,
        duplicate,
        clusters,
    })
}

/// A fitted plane `normal · x = normal · point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    /// Centroid of the inliers.
    pub point: [f64; 3],
    pub inliers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CubeEdgeParams {
    /// RANSAC inlier distance as a fraction of the box diagonal.
    pub inlier_fraction: f64,
    pub iterations: usize,
    /// Maximum angle between normals of opposite faces.
    pub pair_angle_deg: f64,
    pub min_points: usize,
    pub seed: u64,
}

impl Default for CubeEdgeParams {
    fn default() -> Self {
        Self {
            inlier_fraction: 0.005,
            iterations: 1000,
            pair_angle_deg: 10.0,
            min_points: 600,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeEdge {
    pub edge: f64,
    /// Distance between each pair of opposite faces.
    pub distances: Vec<f64>,
    pub planes: Vec<Plane>,
    /// Index pairs into `planes`.
    pub pairs: Vec<(usize, usize)>,
    /// Set when the edge comes from the bounding box instead of face pairs.
    pub degraded: bool,
    pub inlier_threshold: f64,
    pub obb: Obb,
}

impl CubeEdge {
    /// Unit normal of the face pair most aligned with `hint`, signed towards it.
    pub fn axis_towards(&self, hint: [f64; 3]) -> [f64; 3] {
        let h = Vector3::from(hint);
        let candidates: Vec<Vector3<f64>> = if self.pairs.is_empty() {
            self.obb.axes.iter().map(|a| Vector3::from(*a)).collect()
        } else {
            self.pairs.iter().map(|&(i, _)| Vector3::from(self.planes[i].normal)).collect()
        };
        let best = candidates
            .into_iter()
            .fold(None::<Vector3<f64>>, |acc, n| match acc {
                Some(b) if b.dot(&h).abs() >= n.dot(&h).abs() => Some(b),
                _ => Some(n),
            })
            .expect("three candidate axes");
        let n = if best.dot(&h) < 0.0 { -best } else { best };
        [n.x, n.y, n.z]
    }
}

fn fit_plane(points: &[[f64; 3]], idx: &[usize]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let sub: Vec<[f64; 3]> = idx.iter().map(|&i| points[i]).collect();
    let c = centroid(&sub);
    let (axes, vals) = principal_axes(&covariance(&sub, &c));
    if !(vals[1] > 0.0) {
        return None;
    }
    Some((axes.column(2).into_owned(), c))
}

/// Edge length of a cube cluster from opposite face planes.
pub fn estimate_cube_edge(points: &[[f64; 3]], params: &CubeEdgeParams) -> Result<CubeEdge> {
    if points.len() < 4 {
        return Err(Error::Estimation(format!("cube cluster has only {} points", points.len())));
    }
    let obb = fit_obb(points);
    let threshold = params.inlier_fraction * obb.diagonal();
    if !(obb.extents[2] > 2.0 * threshold) {
        return Err(Error::Estimation(format!(
            "cube cluster is flat (box {:?}); no opposite faces",
            obb.extents
        )));
    }
    let fallback = |planes: Vec<Plane>, pairs: Vec<(usize, usize)>, distances: Vec<f64>| CubeEdge {
        edge: obb.extents[1],
        distances,
        planes,
        pairs,
        degraded: true,
        inlier_threshold: threshold,
        obb: obb.clone(),
    };
    if points.len() < params.min_points {
        warn!("cube cluster has {} points; using box extents", points.len());
        return Ok(fallback(Vec::new(), Vec::new(), Vec::new()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut planes: Vec<Plane> = Vec::new();
    let min_support = (points.len() / 50).max(10);
    while planes.len() < 6 && remaining.len() >= min_support {
        let mut best: Option<(usize, Vector3<f64>, Vector3<f64>)> = None;
        for _ in 0..params.iterations {
            let a = remaining[rng.random_range(0..remaining.len())];
            let b = remaining[rng.random_range(0..remaining.len())];
            let c = remaining[rng.random_range(0..remaining.len())];
            let (pa, pb, pc) = (Vector3::from(points[a]), Vector3::from(points[b]), Vector3::from(points[c]));
            let n = (pb - pa).cross(&(pc - pa));
            if !(n.norm() > 1e-12 * obb.diagonal().powi(2)) {
                continue;
            }
            let n = n.normalize();
            let count = remaining
                .iter()
                .filter(|&&i| (n.dot(&(Vector3::from(points[i]) - pa))).abs() <= threshold)
                .count();
            if best.as_ref().is_none_or(|(bc, _, _)| count > *bc) {
                best = Some((count, n, pa));
            }
        }
        let Some((count, n, p0)) = best else { break };
        if count < min_support {
            break;
        }
        let inliers: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| (n.dot(&(Vector3::from(points[i]) - p0))).abs() <= threshold)
            .collect();
        let Some((n_fit, c_fit)) = fit_plane(points, &inliers) else { break };
        let refined: Vec<usize> = inliers
            .iter()
            .copied()
            .filter(|&i| (n_fit.dot(&(Vector3::from(points[i]) - c_fit))).abs() <= threshold)
            .collect();
        let (normal, center) = if refined.len() >= 3 {
            fit_plane(points, &refined).unwrap_or((n_fit, c_fit))
        } else {
            (n_fit, c_fit)
        };
        if planes.is_empty() && inliers.len() as f64 >= 0.95 * points.len() as f64 {
            return Err(Error::Estimation("cube cluster is coplanar".into()));
        }
        planes.push(Plane {
            normal: [normal.x, normal.y, normal.z],
            point: [center.x, center.y, center.z],
            inliers: inliers.len(),
        });
        let removed: std::collections::HashSet<usize> = inliers.into_iter().collect();
        remaining.retain(|i| !removed.contains(i));
    }

    // Opposite faces: most antiparallel-or-parallel normals first, disjoint pairs.
    let cos_limit = params.pair_angle_deg.to_radians().cos();
    let mut candidates = Vec::new();
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            let d = Vector3::from(planes[i].normal).dot(&Vector3::from(planes[j].normal)).abs();
            if d >= cos_limit {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; planes.len()];
    let mut pairs = Vec::new();
    let mut distances = Vec::new();
    for (_, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        let ni = Vector3::from(planes[i].normal);
        let mut nj = Vector3::from(planes[j].normal);
        if ni.dot(&nj) < 0.0 {
            nj = -nj;
        }
        let n = (ni + nj).normalize();
        let gap = n.dot(&(Vector3::from(planes[i].point) - Vector3::from(planes[j].point))).abs();
        // Parallel planes that are not separated belong to the same face.
        if gap <= 2.0 * threshold {
            continue;
        }
        used[i] = true;
        used[j] = true;
        pairs.push((i, j));
        distances.push(gap);
    }
    if pairs.len() < 3 {
        warn!("only {} opposite face pairs found; using box extents", pairs.len());
        return Ok(fallback(planes, pairs, distances));
    }
    pairs.truncate(3);
    distances.truncate(3);
    Ok(CubeEdge {
        edge: distances.iter().sum::<f64>() / 3.0,
        distances,
        planes,
        pairs,
        degraded: false,
        inlier_threshold: threshold,
        obb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand_distr::{Distribution, StandardNormal};

    use crate::phenotype::dbscan::NOISE;

    fn cube_surface(edge: f64, n: usize, rot: &Rotation3<f64>, offset: [f64; 3]) -> Vec<[f64; 3]> {
        let h = edge / 2.0;
        let mut pts = Vec::new();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                for i in 0..n {
                    for j in 0..n {
                        let mut p = [0.0; 3];
                        p[axis] = sign * h;
                        p[(axis + 1) % 3] = -h + edge * (i as f64 + 0.5) / n as f64;
                        p[(axis + 2) % 3] = -h + edge * (j as f64 + 0.5) / n as f64;
                        let q = rot * Vector3::from(p);
                        pts.push([q.x + offset[0], q.y + offset[1], q.z + offset[2]]);
                    }
                }
            }
        }
        pts
    }

    #[test]
    fn exact_cube_edge() {
        let rot = Rotation3::from_euler_angles(0.2, 0.5, -0.9);
        let pts = cube_surface(0.2, 14, &rot, [0.3, -0.1, 0.05]);
        let e = estimate_cube_edge(&pts, &CubeEdgeParams::default()).unwrap();
        assert!(!e.degraded);
        assert_eq!(e.pairs.len(), 3);
        assert!((e.edge - 0.2).abs() < 1e-6, "{}", e.edge);
    }

    #[test]
    fn noisy_cube_edges() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rot = Rotation3::from_euler_angles(rng.random(), rng.random(), rng.random());
            let sigma = 0.001 * 0.2;
            let pts: Vec<[f64; 3]> = cube_surface(0.2, 14, &rot, [0.0; 3])
                .into_iter()
                .map(|p| p.map(|v| v + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)))
                .collect();
            let e = estimate_cube_edge(&pts, &CubeEdgeParams { seed, ..Default::default() }).unwrap();
            assert!(((e.edge - 0.2) / 0.2).abs() < 0.01, "seed {seed}: {}", e.edge);
        }
    }

    #[test]
    fn flat_plane_is_rejected() {
        let pts: Vec<[f64; 3]> = (0..900).map(|i| [(i % 30) as f64 * 0.01, (i / 30) as f64 * 0.01, 0.0]).collect();
        assert!(matches!(estimate_cube_edge(&pts, &CubeEdgeParams::default()), Err(Error::Estimation(_))));
    }

    #[test]
    fn sparse_cube_falls_back_to_box() {
        let pts = cube_surface(0.2, 5, &Rotation3::identity(), [0.0; 3]);
        let e = estimate_cube_edge(&pts, &CubeEdgeParams::default()).unwrap();
        assert!(e.degraded);
        assert!((e.edge - e.obb.extents[1]).abs() < 1e-15);
    }

    fn labeled(clusters: Vec<Vec<[f64; 3]>>) -> LabeledCloud {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (id, c) in clusters.into_iter().enumerate() {
            labels.extend(std::iter::repeat_n(id as i32, c.len()));
            points.extend(c);
        }
        LabeledCloud { points, labels }
    }

    /// Hollow cylinder along z with surface spacing about `step`.
    fn stalk(len: f64, radius: f64, step: f64) -> Vec<[f64; 3]> {
        let rings = (len / step) as usize;
        let around = (std::f64::consts::TAU * radius / step) as usize;
        let mut pts = Vec::new();
        for i in 0..rings {
            for j in 0..around {
                let a = std::f64::consts::TAU * j as f64 / around as f64;
                pts.push([1.0 + radius * a.cos(), radius * a.sin(), step * i as f64]);
            }
        }
        pts
    }

    #[test]
    fn cube_beats_elongated_cluster() {
        let cube = cube_surface(0.2, 10, &Rotation3::identity(), [0.0; 3]);
        let cloud = labeled(vec![stalk(0.5, 0.03, 0.02), cube]);
        let choice = identify_cube(&cloud).unwrap();
        assert_eq!(choice.cluster, 1);
        assert!(!choice.duplicate);
    }

    #[test]
    fn identical_cubes_tie_to_lower_id() {
        let a = cube_surface(0.2, 8, &Rotation3::identity(), [0.0; 3]);
        let b = cube_surface(0.2, 8, &Rotation3::identity(), [2.0, 0.0, 0.0]);
        let choice = identify_cube(&labeled(vec![a, b])).unwrap();
        assert_eq!(choice.cluster, 0);
        assert!(choice.duplicate);
    }

    #[test]
    fn single_cluster_is_an_error() {
        let mut cloud = labeled(vec![stalk(0.5, 0.03, 0.02)]);
        cloud.labels[0] = NOISE;
        assert!(matches!(identify_cube(&cloud), Err(Error::Segmentation(_))));
    }
}
