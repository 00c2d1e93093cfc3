use log::{info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::scene::GaussianScene;

use super::cube::{estimate_cube_edge, identify_cube, ClusterDiagnostics, CubeEdgeParams};
use super::dbscan::{dbscan, median_knn_distance, LabeledCloud};
use super::measure::{compute_scale, crown_width, extract_points, plant_height};
use super::obb::{centroid, covariance, fit_obb, principal_axes};

/// Direction along which height is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpAxis {
    #[default]
    WorldZ,
    Custom([f64; 3]),
    /// Normal of the cube face pair closest to the least-spread direction of
    /// the camera centers (world z without cameras).
    Cube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraitConfig {
    pub opacity_min: f64,
    /// DBSCAN radius; `None` picks twice the median 8th-neighbor distance.
    pub eps: Option<f64>,
    pub min_pts: usize,
    pub true_edge_cm: f64,
    pub up: UpAxis,
    /// Percentile trimmed from each end of the height range.
    pub robust_height: Option<f64>,
    pub cube: CubeEdgeParams,
}

impl Default for TraitConfig {
    fn default() -> Self {
        Self {
            opacity_min: 0.5,
            eps: None,
            min_pts: 10,
            true_edge_cm: 10.0,
            up: UpAxis::WorldZ,
            robust_height: None,
            cube: CubeEdgeParams::default(),
        }
    }
}

pub const EPS_KNN: usize = 8;
pub const EPS_FACTOR: f64 = 2.0;
/// A lone cluster at least this square is taken for the cube.
const LONE_CUBE_ASPECT: f64 = 0.7;

impl TraitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.opacity_min) {
            return bad(format!("opacity_min {} outside [0, 1]", self.opacity_min));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eps {e} must be positive"));
            }
        }
        if self.min_pts == 0 {
            return bad("min_pts must be at least 1".into());
        }
        if !(self.true_edge_cm > 0.0) {
            return bad(format!("true_edge_cm {} must be positive", self.true_edge_cm));
        }
        if let Some(p) = self.robust_height {
            if !(0.0..50.0).contains(&p) {
                return bad(format!("robust_height percentile {p} outside [0, 50)"));
            }
        }
        if let UpAxis::Custom(u) = self.up {
            if !(Vector3::from(u).norm() > 0.0) {
                return bad("custom up axis is zero".into());
            }
        }
        let c = &self.cube;
        if !(c.inlier_fraction > 0.0) || c.iterations == 0 || !(c.pair_angle_deg > 0.0 && c.pair_angle_deg < 90.0) {
            return bad("cube edge parameters out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitReport {
    pub plant_id: Option<String>,
    /// Centimeters per reconstruction unit.
    pub scale: f64,
    pub cube_edge_units: f64,
    pub height_cm: f64,
    pub width1_cm: f64,
    pub width2_cm: f64,
    pub up_axis: [f64; 3],
    pub width_axes: [[f64; 3]; 2],
    pub cube_cluster: usize,
    pub plant_cluster: usize,
    pub cube_score: f64,
    pub cube_duplicate: bool,
    pub cube_degraded: bool,
    pub cube_face_distances: Vec<f64>,
    pub eps: f64,
    pub min_pts: usize,
    pub ransac_inlier_threshold: f64,
    pub ransac_iterations: usize,
    pub pair_angle_deg: f64,
    pub points: usize,
    pub noise_points: usize,
    pub clusters: Vec<ClusterDiagnostics>,
}

pub const CSV_HEADER: [&str; 7] = [
    "plant_id",
    "scale",
    "height_cm",
    "width1_cm",
    "width2_cm",
    "cube_edge_units",
    "cube_score",
];

impl TraitReport {
    pub fn csv_record(&self) -> [String; 7] {
        [
            self.plant_id.clone().unwrap_or_default(),
            self.scale.to_string(),
            self.height_cm.to_string(),
            self.width1_cm.to_string(),
            self.width2_cm.to_string(),
            self.cube_edge_units.to_string(),
            self.cube_score.to_string(),
        ]
    }
}

/// Least-spread direction of the camera centers, signed towards +z.
fn camera_minor_axis(centers: &[[f64; 3]]) -> Option<[f64; 3]> {
    if centers.len() < 3 {
        return None;
    }
    let c = centroid(centers);
    let (axes, vals) = principal_axes(&covariance(centers, &c));
    if !(vals[1] > 0.0) {
        return None;
    }
    let mut n: Vector3<f64> = axes.column(2).into_owned();
    if n.z < 0.0 {
        n = -n;
    }
    Some([n.x, n.y, n.z])
}

pub fn default_eps(points: &[[f64; 3]]) -> Result<f64> {
    let d = median_knn_distance(points, EPS_KNN)
        .ok_or_else(|| Error::EmptyCloud(format!("{} points are too few to pick eps", points.len())))?;
    if !(d > 0.0) {
        return Err(Error::Segmentation("points coincide; pass eps explicitly".into()));
    }
    Ok(EPS_FACTOR * d)
}

/// Clusters the cloud, calibrates scale on the cube and measures the largest
/// remaining cluster.
pub fn extract_traits(points: &[[f64; 3]], config: &TraitConfig, camera_centers: Option<&[[f64; 3]]>) -> Result<TraitReport> {
    config.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyCloud("no input points".into()).at(Stage::ExtractPoints));
    }
    let eps = match config.eps {
        Some(e) => e,
        None => default_eps(points).map_err(|e| e.at(Stage::Clustering))?,
    };
    let cloud = dbscan(points, eps, config.min_pts);
    info!(
        "{} points, eps {eps:.4e}: {} clusters, {} noise",
        points.len(),
        cloud.cluster_count(),
        cloud.noise_count()
    );
    check_lone_cube(&cloud)?;
    let choice = identify_cube(&cloud).map_err(|e| e.at(Stage::CubeIdentification))?;
    let cube_pts = cloud.cluster_points(choice.cluster);
    let edge = estimate_cube_edge(&cube_pts, &config.cube).map_err(|e| e.at(Stage::CubeEdge))?;
    let scale = compute_scale(edge.edge, config.true_edge_cm).map_err(|e| e.at(Stage::Scale))?;

    let sizes = cloud.cluster_sizes();
    let plant = (0..sizes.len())
        .filter(|&c| c != choice.cluster)
        .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::PlantMissing.at(Stage::PlantSelection))?;
    let plant_pts = cloud.cluster_points(plant);

    let up = match config.up {
        UpAxis::WorldZ => [0.0, 0.0, 1.0],
        UpAxis::Custom(u) => {
            let v = Vector3::from(u).normalize();
            [v.x, v.y, v.z]
        }
        UpAxis::Cube => {
            let hint = camera_centers.and_then(camera_minor_axis).unwrap_or([0.0, 0.0, 1.0]);
            edge.axis_towards(hint)
        }
    };
    let height_cm = plant_height(&plant_pts, scale, up, config.robust_height).map_err(|e| e.at(Stage::Height))?;
    let crown = crown_width(&plant_pts, scale, up).map_err(|e| e.at(Stage::CrownWidth))?;

    Ok(TraitReport {
        plant_id: None,
        scale,
        cube_edge_units: edge.edge,
        height_cm,
        width1_cm: crown.width1_cm,
        width2_cm: crown.width2_cm,
        up_axis: up,
        width_axes: crown.axes,
        cube_cluster: choice.cluster,
        plant_cluster: plant,
        cube_score: choice.score,
        cube_duplicate: choice.duplicate,
        cube_degraded: edge.degraded,
        cube_face_distances: edge.distances,
        eps,
        min_pts: config.min_pts,
        ransac_inlier_threshold: edge.inlier_threshold,
        ransac_iterations: config.cube.iterations,
        pair_angle_deg: config.cube.pair_angle_deg,
        points: points.len(),
        noise_points: cloud.noise_count(),
        clusters: choice.clusters,
    })
}

/// With a single cluster there is nothing to compare; a square one is the
/// cube and the plant is absent.
fn check_lone_cube(cloud: &LabeledCloud) -> Result<()> {
    if cloud.cluster_count() != 1 {
        return Ok(());
    }
    let obb = fit_obb(&cloud.cluster_points(0));
    if obb.aspect() >= LONE_CUBE_ASPECT {
        warn!("only a cube-like cluster was found (aspect {:.3})", obb.aspect());
        return Err(Error::PlantMissing.at(Stage::PlantSelection));
    }
    Ok(())
}

pub fn extract_traits_from_scene(
    scene: &GaussianScene,
    config: &TraitConfig,
    camera_centers: Option<&[[f64; 3]]>,
) -> Result<TraitReport> {
    let points = extract_points(scene, config.opacity_min).map_err(|e| e.at(Stage::ExtractPoints))?;
    extract_traits(&points, config, camera_centers)
}
