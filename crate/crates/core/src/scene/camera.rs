use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

use super::{normalize_quaternion, unit_quaternion_to_matrix};

/// Pinhole camera with a world-to-camera rigid pose.
///
/// Camera space is x right, y down, z forward. Image coordinates are
/// continuous with the top-left corner of the top-left pixel at (0, 0), so the
/// center of pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraView {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Pose given as a COLMAP-style quaternion `(qw, qx, qy, qz)` and translation.
    pub fn from_quaternion(
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
        qvec: [f64; 4],
        tvec: [f64; 3],
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let rotation = unit_quaternion_to_matrix(normalize_quaternion(qvec)?);
        Self::new(fx, fy, cx, cy, width, height, rotation, Vector3::from(tvec))
    }

    /// Camera at `eye` looking at `target` with `up` pointing up in the image.
    /// Also returns the pose quaternion the rotation was built from, so the pose
    /// can be written out and read back without drift.
    pub fn look_at(
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Result<(Self, [f64; 4])> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up));
        if !(right.norm() > 1e-9) || !forward.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("look-at direction is degenerate".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m));
        let qvec = [q.w, q.i, q.j, q.k];
        let rotation = unit_quaternion_to_matrix(normalize_quaternion(qvec)?);
        let t = -(rotation * eye);
        let cam = Self::from_quaternion(intrinsics, width, height, qvec, [t.x, t.y, t.z])?;
        Ok((cam, qvec))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("camera has non-finite values".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera has zero image size".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        let det = self.rotation.determinant();
        if orth > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "camera rotation is not a proper rotation (orthogonality error {orth:.2e}, det {det})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    pub fn project(&self, p_cam: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }

    /// Intrinsics rescaled for an image downsampled by `factor`.
    pub fn downsampled(&self, factor: usize, width: usize, height: usize) -> Result<Self> {
        let f = factor as f64;
        Self::new(
            self.fx / f,
            self.fy / f,
            self.cx / f,
            self.cy / f,
            width,
            height,
            self.rotation,
            self.translation,
        )
    }
}
