//! Gaussian scene representation: splat parameters, activations and covariance.

mod camera;
pub mod sh;

pub use camera::CameraView;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One anisotropic Gaussian primitive in raw (unconstrained) parameters.
///
/// Rotation is a quaternion `(w, x, y, z)` that is renormalized wherever it is
/// used, scales live in the log domain and opacity in the logit domain, so any
/// finite parameter vector describes a valid Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSplat {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    /// Coefficient-major SH table, `sh[k][channel]`.
    pub sh: Vec<[f64; 3]>,
}

/// Splat parameters after activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivatedSplat {
    pub opacity: f64,
    pub scales: [f64; 3],
    pub rotation: [f64; 4],
}

/// Parameter families, each optimized with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamFamily {
    Position,
    Rotation,
    LogScale,
    Opacity,
    ShDc,
    ShRest,
}

impl ParamFamily {
    pub const ALL: [ParamFamily; 6] = [
        ParamFamily::Position,
        ParamFamily::Rotation,
        ParamFamily::LogScale,
        ParamFamily::Opacity,
        ParamFamily::ShDc,
        ParamFamily::ShRest,
    ];
}

// Offsets into the flat per-splat parameter layout.
pub const OFFSET_POSITION: usize = 0;
pub const OFFSET_ROTATION: usize = 3;
pub const OFFSET_LOG_SCALE: usize = 7;
pub const OFFSET_OPACITY: usize = 10;
pub const OFFSET_SH: usize = 11;

/// Length of the flat parameter vector of one splat.
pub const fn param_stride(sh_degree: usize) -> usize {
    OFFSET_SH + 3 * sh::coeff_count(sh_degree)
}

pub fn family_of(index: usize) -> ParamFamily {
    match index {
        0..=2 => ParamFamily::Position,
        3..=6 => ParamFamily::Rotation,
        7..=9 => ParamFamily::LogScale,
        10 => ParamFamily::Opacity,
        11..=13 => ParamFamily::ShDc,
        _ => ParamFamily::ShRest,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl GaussianSplat {
    /// Isotropic splat with a view-independent color.
    pub fn isotropic(position: [f64; 3], sigma: f64, opacity: f64, rgb: [f64; 3], sh_degree: usize) -> Self {
        let mut sh = vec![[0.0; 3]; sh::coeff_count(sh_degree)];
        sh[0] = rgb.map(sh::rgb_to_dc);
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [sigma.ln(); 3],
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.scales().into_iter().fold(f64::MIN, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }

    pub fn write_params(&self, out: &mut [f64]) {
        out[OFFSET_POSITION..OFFSET_POSITION + 3].copy_from_slice(&self.position);
        out[OFFSET_ROTATION..OFFSET_ROTATION + 4].copy_from_slice(&self.rotation);
        out[OFFSET_LOG_SCALE..OFFSET_LOG_SCALE + 3].copy_from_slice(&self.log_scale);
        out[OFFSET_OPACITY] = self.opacity_logit;
        for (k, coeff) in self.sh.iter().enumerate() {
            out[OFFSET_SH + 3 * k..OFFSET_SH + 3 * k + 3].copy_from_slice(coeff);
        }
    }

    pub fn read_params(&mut self, params: &[f64]) {
        self.position.copy_from_slice(&params[OFFSET_POSITION..OFFSET_POSITION + 3]);
        self.rotation.copy_from_slice(&params[OFFSET_ROTATION..OFFSET_ROTATION + 4]);
        self.log_scale.copy_from_slice(&params[OFFSET_LOG_SCALE..OFFSET_LOG_SCALE + 3]);
        self.opacity_logit = params[OFFSET_OPACITY];
        for (k, coeff) in self.sh.iter_mut().enumerate() {
            coeff.copy_from_slice(&params[OFFSET_SH + 3 * k..OFFSET_SH + 3 * k + 3]);
        }
    }
}

/// Activates raw parameters, rejecting non-finite values.
pub fn activate(splat: &GaussianSplat) -> Result<ActivatedSplat> {
    if !splat.is_finite() {
        return Err(Error::InvalidParameter("splat has non-finite parameters".into()));
    }
    Ok(ActivatedSplat {
        opacity: splat.opacity(),
        scales: splat.scales(),
        rotation: normalize_quaternion(splat.rotation)?,
    })
}

pub fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter("quaternion has zero or non-finite norm".into()));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn unit_quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Renormalizes `q` and returns its rotation matrix.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Result<Matrix3<f64>> {
    Ok(unit_quaternion_to_matrix(normalize_quaternion(q)?))
}

/// Backpropagates `dL/dR` to the raw (unnormalized) quaternion.
pub fn quaternion_backward(raw: [f64; 4], d_rot: &Matrix3<f64>) -> [f64; 4] {
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]).sqrt();
    let [w, x, y, z] = raw.map(|v| v / n);
    let g = |m: Matrix3<f64>| m.component_mul(d_rot).sum();
    let dw = g(Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0));
    let dx = g(Matrix3::new(
        0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x,
    ));
    let dy = g(Matrix3::new(
        -4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y,
    ));
    let dz = g(Matrix3::new(
        -4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0,
    ));
    let dq = [dw, dx, dy, dz];
    let unit = [w, x, y, z];
    let dot: f64 = dq.iter().zip(&unit).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (dq[i] - unit[i] * dot) / n)
}

/// Σ = R·S·Sᵀ·Rᵀ with S = diag(exp(log_scale)).
pub fn covariance_from_params(rotation: [f64; 4], log_scale: [f64; 3]) -> Result<Matrix3<f64>> {
    let r = quaternion_to_matrix(rotation)?;
    let m = r * Matrix3::from_diagonal(&Vector3::from(log_scale.map(f64::exp)));
    let sigma = m * m.transpose();
    // Symmetrize explicitly: the product is symmetric only up to rounding.
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Per-splat accumulators driving densification.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementStats {
    /// Sum of screen-space positional gradient norms.
    pub grad_accum: Vec<f64>,
    /// Number of views in which the splat was visible.
    pub observations: Vec<u32>,
}

impl RefinementStats {
    pub fn new(len: usize) -> Self {
        Self {
            grad_accum: vec![0.0; len],
            observations: vec![0; len],
        }
    }

    pub fn reset(&mut self, len: usize) {
        self.grad_accum.clear();
        self.grad_accum.resize(len, 0.0);
        self.observations.clear();
        self.observations.resize(len, 0);
    }

    /// Mean positional gradient over the views that observed each splat.
    pub fn mean_gradient(&self, i: usize) -> f64 {
        match self.observations[i] {
            0 => 0.0,
            n => self.grad_accum[i] / n as f64,
        }
    }
}

/// Ordered collection of splats sharing one SH degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub splats: Vec<GaussianSplat>,
    sh_degree: usize,
    pub stats: RefinementStats,
}

impl GaussianScene {
    pub fn new(sh_degree: usize) -> Result<Self> {
        if sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "SH degree {sh_degree} exceeds {}",
                sh::MAX_SH_DEGREE
            )));
        }
        Ok(Self {
            splats: Vec::new(),
            sh_degree,
            stats: RefinementStats::default(),
        })
    }

    pub fn from_splats(sh_degree: usize, splats: Vec<GaussianSplat>) -> Result<Self> {
        let mut scene = Self::new(sh_degree)?;
        let k = sh::coeff_count(sh_degree);
        for (i, s) in splats.iter().enumerate() {
            if s.sh.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "splat {i} has {} SH coefficients, expected {k}",
                    s.sh.len()
                )));
            }
        }
        scene.stats = RefinementStats::new(splats.len());
        scene.splats = splats;
        Ok(scene)
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn param_stride(&self) -> usize {
        param_stride(self.sh_degree)
    }

    pub fn push(&mut self, mut splat: GaussianSplat) {
        splat.sh.resize(sh::coeff_count(self.sh_degree), [0.0; 3]);
        self.splats.push(splat);
        self.stats.grad_accum.push(0.0);
        self.stats.observations.push(0);
    }

    /// All parameters flattened splat-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let stride = self.param_stride();
        let mut out = vec![0.0; stride * self.len()];
        for (s, chunk) in self.splats.iter().zip(out.chunks_exact_mut(stride)) {
            s.write_params(chunk);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let stride = self.param_stride();
        for (s, chunk) in self.splats.iter_mut().zip(params.chunks_exact(stride)) {
            s.read_params(chunk);
        }
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.splats.iter().map(|s| s.position).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_covariance() {
        let c = covariance_from_params([1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(c, Matrix3::identity());
    }

    #[test]
    fn scaled_axis_covariance() {
        let c = covariance_from_params([1.0, 0.0, 0.0, 0.0], [2f64.ln(), 0.0, 0.0]).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert!((c - expected).abs().max() < 1e-14);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            covariance_from_params([0.0; 4], [0.0; 3]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn eigenvalues_match_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..1.0));
            let c = covariance_from_params(q, v).unwrap();
            let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut expected: Vec<f64> = v.iter().map(|s| (2.0 * s).exp()).collect();
            expected.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{eig:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn activation_values() {
        let mut s = GaussianSplat::isotropic([0.0; 3], 1.0, 0.5, [0.5; 3], 0);
        s.opacity_logit = 0.0;
        s.log_scale = [-1.0, 0.0, 1.0];
        let a = activate(&s).unwrap();
        assert_eq!(a.opacity, 0.5);
        assert!((a.scales[0] - 0.3679).abs() < 1e-4);
        assert_eq!(a.scales[1], 1.0);
        assert!((a.scales[2] - std::f64::consts::E).abs() < 1e-4);

        s.opacity_logit = -800.0;
        assert_eq!(activate(&s).unwrap().opacity, 0.0);
        s.opacity_logit = -40.0;
        let tiny = activate(&s).unwrap().opacity;
        assert!(tiny > 0.0 && tiny < 1e-17);

        s.position[1] = f64::NAN;
        assert!(activate(&s).is_err());
    }

    #[test]
    fn quaternion_backward_matches_finite_differences() {
        let raw = [0.7, -0.3, 0.45, 0.2];
        let weights = Matrix3::new(0.3, -1.2, 0.5, 0.8, 0.1, -0.7, 0.25, 0.6, -0.9);
        let loss = |q: [f64; 4]| quaternion_to_matrix(q).unwrap().component_mul(&weights).sum();
        let analytic = quaternion_backward(raw, &weights);
        for i in 0..4 {
            let (mut p, mut m) = (raw, raw);
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (loss(p) - loss(m)) / 2e-6;
            assert!((fd - analytic[i]).abs() < 1e-8, "{i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let splats = (0..4)
            .map(|_| GaussianSplat {
                position: std::array::from_fn(|_| rng.random()),
                rotation: std::array::from_fn(|_| rng.random()),
                log_scale: std::array::from_fn(|_| rng.random()),
                opacity_logit: rng.random(),
                sh: (0..16).map(|_| std::array::from_fn(|_| rng.random())).collect(),
            })
            .collect();
        let scene = GaussianScene::from_splats(3, splats).unwrap();
        let flat = scene.flat_params();
        assert_eq!(flat.len(), 4 * param_stride(3));
        let mut copy = scene.clone();
        copy.set_flat_params(&vec![0.0; flat.len()]);
        copy.set_flat_params(&flat);
        assert_eq!(copy, scene);
    }
}
