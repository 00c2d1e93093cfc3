//! Calibration cube next to a plant surrogate: an ellipsoidal canopy shell on
//! a vertical stem. One scene unit is one meter and world up is +z.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GaussianScene, GaussianSplat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub plant_id: String,
    pub cube_edge_cm: f64,
    pub height_cm: f64,
    pub width1_cm: f64,
    pub width2_cm: f64,
    /// Rotation of the canopy's major axis from world x, degrees.
    pub canopy_yaw_deg: f64,
    /// Half-height of the canopy ellipsoid as a fraction of the plant height.
    pub canopy_depth: f64,
    /// Gap between the cube and the canopy footprint, cm.
    pub cube_gap_cm: f64,
    /// Mean splat spacing on the cube faces, cm.
    pub cube_spacing_cm: f64,
    /// Mean splat spacing on the canopy shell, cm.
    pub canopy_spacing_cm: f64,
    pub stem_radius_cm: f64,
    /// Gaussian jitter added to every object splat center after construction,
    /// mimicking reconstruction noise, cm.
    pub position_noise_cm: f64,
    /// Number of table splats around the objects, excluded from masks.
    pub clutter: usize,
    pub clutter_radius_cm: f64,
    /// Radius of a textured table disk and surrounding wall, cm; 0 disables
    /// them. Both count as clutter.
    pub environment_radius_cm: f64,
    pub environment_spacing_cm: f64,
    pub ring_radius: f64,
    pub ring_heights: Vec<f64>,
    pub cameras_per_ring: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    pub sh_degree: usize,
    /// Fraction of the object splat centers exported as sparse points.
    pub sparse_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            plant_id: "synth".into(),
            cube_edge_cm: 10.0,
            height_cm: 22.0,
            width1_cm: 30.0,
            width2_cm: 24.0,
            canopy_yaw_deg: 0.0,
            canopy_depth: 0.35,
            cube_gap_cm: 8.0,
            cube_spacing_cm: 0.5,
            canopy_spacing_cm: 0.8,
            stem_radius_cm: 0.4,
            position_noise_cm: 0.0,
            clutter: 0,
            clutter_radius_cm: 45.0,
            environment_radius_cm: 0.0,
            environment_spacing_cm: 3.0,
            ring_radius: 0.75,
            ring_heights: vec![0.12, 0.35, 0.6],
            cameras_per_ring: 4,
            width: 64,
            height: 64,
            fov_deg: 55.0,
            sh_degree: 0,
            sparse_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        for (name, v) in [
            ("cube_edge_cm", self.cube_edge_cm),
            ("height_cm", self.height_cm),
            ("width1_cm", self.width1_cm),
            ("width2_cm", self.width2_cm),
            ("cube_spacing_cm", self.cube_spacing_cm),
            ("canopy_spacing_cm", self.canopy_spacing_cm),
            ("stem_radius_cm", self.stem_radius_cm),
            ("ring_radius", self.ring_radius),
            ("fov_deg", self.fov_deg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.width1_cm < self.width2_cm {
            return bad(format!("width1_cm {} is below width2_cm {}", self.width1_cm, self.width2_cm));
        }
        if !(self.canopy_depth > 0.0 && self.canopy_depth < 0.5) {
            return bad(format!("canopy_depth {} outside (0, 0.5)", self.canopy_depth));
        }
        if !(self.position_noise_cm >= 0.0) {
            return bad(format!("position_noise_cm {} is negative", self.position_noise_cm));
        }
        if !(self.environment_radius_cm >= 0.0) || !(self.environment_spacing_cm > 0.0) {
            return bad("environment radius must be non-negative and its spacing positive".into());
        }
        if self.environment_radius_cm > 0.0 && self.environment_radius_cm * 0.01 <= self.ring_radius {
            return bad("environment wall must lie outside the camera ring".into());
        }
        if !(self.cube_gap_cm >= 0.0) || !(self.clutter_radius_cm > 0.0) {
            return bad("cube_gap_cm and clutter_radius_cm must be non-negative".into());
        }
        if self.ring_heights.is_empty() || self.cameras_per_ring < 3 {
            return bad("need at least one ring with 3 or more cameras".into());
        }
        if self.width == 0 || self.height == 0 || self.fov_deg >= 170.0 {
            return bad("image size must be positive and the field of view below 170 degrees".into());
        }
        if !(0.0..=1.0).contains(&self.sparse_fraction) {
            return bad(format!("sparse_fraction {} outside [0, 1]", self.sparse_fraction));
        }
        if self.sh_degree > crate::scene::sh::MAX_SH_DEGREE {
            return bad(format!("sh_degree {} too large", self.sh_degree));
        }
        Ok(())
    }

    /// Trait values the generated geometry has by construction.
    pub fn oracle(&self) -> OracleTraits {
        let edge_units = self.cube_edge_cm / 100.0;
        OracleTraits {
            plant_id: self.plant_id.clone(),
            cube_edge_cm: self.cube_edge_cm,
            cube_edge_units: edge_units,
            scale: self.cube_edge_cm / edge_units,
            height_cm: self.height_cm,
            width1_cm: self.width1_cm,
            width2_cm: self.width2_cm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTraits {
    pub plant_id: String,
    pub cube_edge_cm: f64,
    pub cube_edge_units: f64,
    /// Centimeters per scene unit.
    pub scale: f64,
    pub height_cm: f64,
    pub width1_cm: f64,
    pub width2_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Membership {
    Cube,
    Plant,
    Clutter,
}

impl Membership {
    pub fn is_foreground(self) -> bool {
        self != Membership::Clutter
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: GaussianScene,
    pub membership: Vec<Membership>,
    pub oracle: OracleTraits,
}

impl SynthScene {
    pub fn points_of(&self, kind: Membership) -> Vec<[f64; 3]> {
        self.scene
            .splats
            .iter()
            .zip(&self.membership)
            .filter(|(_, &m)| m == kind)
            .map(|(s, _)| s.position)
            .collect()
    }

    /// Scene restricted to cube and plant splats.
    pub fn foreground(&self) -> GaussianScene {
        let splats = self
            .scene
            .splats
            .iter()
            .zip(&self.membership)
            .filter(|(_, m)| m.is_foreground())
            .map(|(s, _)| s.clone())
            .collect();
        GaussianScene::from_splats(self.scene.sh_degree(), splats).expect("same degree")
    }

    /// The full scene with cube and plant splats painted white and everything
    /// else black, so a render on black gives the visible foreground coverage.
    pub fn visibility_matte(&self) -> GaussianScene {
        let splats = self
            .scene
            .splats
            .iter()
            .zip(&self.membership)
            .map(|(s, m)| {
                let v = if m.is_foreground() { 1.0 } else { 0.0 };
                GaussianSplat {
                    sh: vec![[crate::scene::sh::rgb_to_dc(v); 3]],
                    ..s.clone()
                }
            })
            .collect();
        GaussianScene::from_splats(0, splats).expect("degree 0")
    }

    /// Center of the cube and plant bounding box.
    pub fn focus(&self) -> [f64; 3] {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (s, m) in self.scene.splats.iter().zip(&self.membership) {
            if m.is_foreground() {
                for k in 0..3 {
                    lo[k] = lo[k].min(s.position[k]);
                    hi[k] = hi[k].max(s.position[k]);
                }
            }
        }
        std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]))
    }
}

const OPACITY: f64 = 0.95;
const CUBE_COLORS: [[f64; 3]; 6] = [
    [0.85, 0.2, 0.15],
    [0.2, 0.35, 0.85],
    [0.9, 0.8, 0.2],
    [0.9, 0.9, 0.9],
    [0.25, 0.75, 0.8],
    [0.75, 0.3, 0.7],
];

fn jitter(rng: &mut impl Rng, amount: f64) -> f64 {
    rng.random_range(-amount..=amount)
}

/// Points on the six faces of an axis-aligned cube of edge `e` centered at the
/// origin, on a jittered grid; face index per point.
fn cube_faces(rng: &mut impl Rng, e: f64, spacing: f64) -> Vec<([f64; 3], usize)> {
    let n = (e / spacing).round().max(2.0) as usize;
    let h = e / 2.0;
    let mut out = Vec::new();
    for axis in 0..3 {
        for (side, sign) in [-1.0, 1.0].into_iter().enumerate() {
            for i in 0..=n {
                for j in 0..=n {
                    // Grid nodes on the face border stay exact so the faces meet.
                    let du = if i == 0 || i == n { 0.0 } else { jitter(rng, 0.3 * e / n as f64) };
                    let dv = if j == 0 || j == n { 0.0 } else { jitter(rng, 0.3 * e / n as f64) };
                    let mut p = [0.0; 3];
                    p[axis] = sign * h;
                    p[(axis + 1) % 3] = -h + e * i as f64 / n as f64 + du;
                    p[(axis + 2) % 3] = -h + e * j as f64 / n as f64 + dv;
                    out.push((p, 2 * axis + side));
                }
            }
        }
    }
    out
}

/// Approximate ellipsoid surface area.
fn ellipsoid_area(a: f64, b: f64, c: f64) -> f64 {
    let p = 1.6075;
    4.0 * PI * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0).powf(1.0 / p)
}

/// Shell samples mirrored into all eight octants, so the sample covariance is
/// diagonal in the ellipsoid frame, plus the six axis extremes.
fn canopy_shell(rng: &mut impl Rng, a: f64, b: f64, c: f64, spacing: f64) -> Vec<[f64; 3]> {
    let target = (ellipsoid_area(a, b, c) / (spacing * spacing)).ceil() as usize;
    let mut out = vec![[a, 0.0, 0.0], [-a, 0.0, 0.0], [0.0, b, 0.0], [0.0, -b, 0.0], [0.0, 0.0, c], [0.0, 0.0, -c]];
    // Area-weighted rejection sampling of directions in the positive octant.
    let max_w = (b * c).max(a * c).max(a * b);
    while out.len() < target {
        let z: f64 = rng.random_range(0.0..1.0);
        let phi = rng.random_range(0.0..(PI / 2.0));
        let r = (1.0 - z * z).sqrt();
        let (x, y) = (r * phi.cos(), r * phi.sin());
        let w = ((b * c * x).powi(2) + (a * c * y).powi(2) + (a * b * z).powi(2)).sqrt();
        if rng.random_range(0.0..max_w) > w {
            continue;
        }
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                for sz in [1.0, -1.0] {
                    out.push([sx * a * x, sy * b * y, sz * c * z]);
                }
            }
        }
    }
    out
}

const ENV_WALL_HEIGHT: f64 = 0.8;
const ENV_TILE: f64 = 0.1;

/// Table disk below the clutter plus a cylindrical wall, both tiled with
/// random colors in 10 cm cells.
fn environment(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<([f64; 3], f64, [f64; 3])> {
    let r = spec.environment_radius_cm * 0.01;
    let step = spec.environment_spacing_cm * 0.01;
    let sigma = 0.6 * step;
    let mut tiles = std::collections::BTreeMap::new();
    let mut tile_color = |key: (i64, i64, u8), rng: &mut dyn rand::RngCore| {
        *tiles
            .entry(key)
            .or_insert_with(|| std::array::from_fn(|_| rng.random_range(0.15..0.85)))
    };
    let mut out = Vec::new();
    let n = (r / step).ceil() as i64;
    for i in -n..=n {
        for j in -n..=n {
            let x = i as f64 * step + jitter(rng, 0.25 * step);
            let y = j as f64 * step + jitter(rng, 0.25 * step);
            if x * x + y * y > r * r {
                continue;
            }
            let key = ((x / ENV_TILE).floor() as i64, (y / ENV_TILE).floor() as i64, 0);
            out.push(([x, y, -0.02], sigma, tile_color(key, rng)));
        }
    }
    let around = (TAU * r / step).ceil() as usize;
    let rows = (ENV_WALL_HEIGHT / step).ceil() as usize;
    for a in 0..around {
        let t = TAU * a as f64 / around as f64;
        for k in 0..=rows {
            let z = k as f64 * step - 0.02;
            let key = ((t * r / ENV_TILE).floor() as i64, (z / ENV_TILE).floor() as i64, 1);
            out.push(([r * t.cos(), r * t.sin(), z], sigma, tile_color(key, rng)));
        }
    }
    out
}

fn leaf_color(rng: &mut impl Rng) -> [f64; 3] {
    [0.15 + jitter(rng, 0.08), 0.55 + jitter(rng, 0.15), 0.2 + jitter(rng, 0.08)]
}

pub fn generate_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let deg = spec.sh_degree;
    let cm = 0.01;
    let mut splats = Vec::new();
    let mut membership = Vec::new();

    let (a, b) = (spec.width1_cm * cm / 2.0, spec.width2_cm * cm / 2.0);
    let h = spec.height_cm * cm;
    let c = spec.canopy_depth * h;
    let yaw = spec.canopy_yaw_deg.to_radians();
    let (sy, cy) = yaw.sin_cos();

    // Cube on the ground to the -x side of the canopy footprint.
    let e = spec.cube_edge_cm * cm;
    let cube_x = -(a.max(b) + spec.cube_gap_cm * cm + e * std::f64::consts::FRAC_1_SQRT_2);
    let cube_sigma = 0.5 * spec.cube_spacing_cm * cm;
    for (p, face) in cube_faces(&mut rng, e, spec.cube_spacing_cm * cm) {
        let pos = [p[0] + cube_x, p[1], p[2] + e / 2.0];
        splats.push(GaussianSplat::isotropic(pos, cube_sigma, OPACITY, CUBE_COLORS[face], deg));
        membership.push(Membership::Cube);
    }

    let canopy_sigma = 0.5 * spec.canopy_spacing_cm * cm;
    for p in canopy_shell(&mut rng, a, b, c, spec.canopy_spacing_cm * cm) {
        let pos = [cy * p[0] - sy * p[1], sy * p[0] + cy * p[1], p[2] + h - c];
        splats.push(GaussianSplat::isotropic(pos, canopy_sigma, OPACITY, leaf_color(&mut rng), deg));
        membership.push(Membership::Plant);
    }

    // Stem from the ground to the canopy center, as rings of splats.
    let r = spec.stem_radius_cm * cm;
    let step = 0.5 * spec.canopy_spacing_cm * cm;
    let rings = ((h - c) / step).ceil() as usize;
    let stem_color = [0.45, 0.32, 0.18];
    splats.push(GaussianSplat::isotropic([0.0; 3], r, OPACITY, stem_color, deg));
    membership.push(Membership::Plant);
    for i in 0..=rings {
        let z = (h - c) * i as f64 / rings as f64;
        for k in 0..6 {
            let t = TAU * (k as f64 + 0.5 * (i % 2) as f64) / 6.0;
            splats.push(GaussianSplat::isotropic([r * t.cos(), r * t.sin(), z], r, OPACITY, stem_color, deg));
            membership.push(Membership::Plant);
        }
    }

    if spec.position_noise_cm > 0.0 {
        let sigma = spec.position_noise_cm * cm;
        for s in &mut splats {
            for v in &mut s.position {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    // Clutter: colored patches on the table around the objects, slightly below z = 0.
    let rc = spec.clutter_radius_cm * cm;
    let mut placed = 0;
    while placed < spec.clutter {
        let rr = rc * rng.random_range(0.55f64..1.0).sqrt();
        let t = rng.random_range(0.0..TAU);
        let color = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let patch = rng.random_range(1..=4usize).min(spec.clutter - placed);
        for _ in 0..patch {
            let pos = [
                rr * t.cos() + jitter(&mut rng, 0.02),
                rr * t.sin() + jitter(&mut rng, 0.02),
                -0.01 + jitter(&mut rng, 0.005),
            ];
            let sigma = rng.random_range(0.008..0.02);
            splats.push(GaussianSplat::isotropic(pos, sigma, OPACITY, color, deg));
            membership.push(Membership::Clutter);
        }
        placed += patch;
    }
    if spec.environment_radius_cm > 0.0 {
        for (pos, sigma, color) in environment(spec, &mut rng) {
            splats.push(GaussianSplat::isotropic(pos, sigma, OPACITY, color, deg));
            membership.push(Membership::Clutter);
        }
    }

    Ok(SynthScene {
        scene: GaussianScene::from_splats(deg, splats)?,
        membership,
        oracle: spec.oracle(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extent(points: &[[f64; 3]], axis: usize) -> f64 {
        let lo = points.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    #[test]
    fn constructed_dimensions() {
        let s = generate_scene(&SynthSpec::default()).unwrap();
        let cube = s.points_of(Membership::Cube);
        for axis in 0..3 {
            assert!((extent(&cube, axis) - 0.1).abs() < 1e-12);
        }
        let plant = s.points_of(Membership::Plant);
        assert!((extent(&plant, 2) - 0.22).abs() < 1e-12);
        assert!((extent(&plant, 0) - 0.30).abs() < 1e-12);
        assert!((extent(&plant, 1) - 0.24).abs() < 1e-12);
        assert!(cube.len() >= 600);
    }

    #[test]
    fn seeds_change_samples_not_oracle() {
        let a = generate_scene(&SynthSpec::default()).unwrap();
        let b = generate_scene(&SynthSpec { seed: 9, ..Default::default() }).unwrap();
        assert_ne!(a.points_of(Membership::Plant), b.points_of(Membership::Plant));
        assert_eq!(a.oracle, b.oracle);
    }

    #[test]
    fn negative_height_is_rejected() {
        let spec = SynthSpec { height_cm: -1.0, ..Default::default() };
        assert!(matches!(generate_scene(&spec), Err(Error::Config(_))));
    }
}
