//! Metric plant traits from a reconstructed point cloud, calibrated against a
//! cube of known edge length.

mod cube;
mod dbscan;
pub(crate) mod grid;
mod measure;
mod obb;
mod pipeline;

pub use cube::{
    cluster_diagnostics, estimate_cube_edge, identify_cube, ClusterDiagnostics, CubeChoice, CubeEdge, CubeEdgeParams,
    Plane,
};
pub use dbscan::{dbscan, median_knn_distance, LabeledCloud, NOISE};
pub use measure::{compute_scale, crown_width, extract_points, plant_height, CrownWidth};
pub use obb::{fit_obb, pca_obb, Obb};
pub use pipeline::{
    default_eps, extract_traits, extract_traits_from_scene, TraitConfig, TraitReport, UpAxis, CSV_HEADER, EPS_FACTOR,
    EPS_KNN,
};
