//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Basis ordering and constants follow the layout used by Gaussian splatting
//! checkpoints, so coefficient `k` of a splat maps to `f_dc`/`f_rest` slots
//! without reindexing.

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per color channel for a given degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn degree_from_coeff_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| coeff_count(d) == count)
}

/// Color channel value to DC coefficient, inverting the +0.5 offset.
pub fn rgb_to_dc(value: f64) -> f64 {
    (value - 0.5) / SH_C0
}

pub fn dc_to_rgb(dc: f64) -> f64 {
    dc * SH_C0 + 0.5
}

/// Basis values at a unit direction. Entries above `degree` are zero.
pub fn basis(degree: usize, d: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = d;
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial with respect to (x, y, z).
pub fn basis_jacobian(degree: usize, d: [f64; 3]) -> [[f64; 3]; 16] {
    let [x, y, z] = d;
    let mut j = [[0.0; 3]; 16];
    if degree >= 1 {
        j[1] = [0.0, -SH_C1, 0.0];
        j[2] = [0.0, 0.0, SH_C1];
        j[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        j[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        j[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        j[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        j[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        j[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            j[9] = [6.0 * SH_C3[0] * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
            j[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
            j[11] = [
                -2.0 * SH_C3[2] * x * y,
                SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
                8.0 * SH_C3[2] * y * z,
            ];
            j[12] = [
                -6.0 * SH_C3[3] * x * z,
                -6.0 * SH_C3[3] * y * z,
                SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            j[13] = [
                SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * SH_C3[4] * x * y,
                8.0 * SH_C3[4] * x * z,
            ];
            j[14] = [
                2.0 * SH_C3[5] * x * z,
                -2.0 * SH_C3[5] * y * z,
                SH_C3[5] * (xx - yy),
            ];
            j[15] = [
                SH_C3[6] * (3.0 * xx - 3.0 * yy),
                -6.0 * SH_C3[6] * x * y,
                0.0,
            ];
        }
    }
    j
}

pub(crate) fn normalize_direction(d: [f64; 3]) -> Result<([f64; 3], f64)> {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter(
            "view direction has zero or non-finite length".into(),
        ));
    }
    Ok(([d[0] / n, d[1] / n, d[2] / n], n))
}

/// SH color before the non-negativity clamp, including the +0.5 offset.
pub fn evaluate_unclamped(coeffs: &[[f64; 3]], degree: usize, dir: [f64; 3]) -> Result<[f64; 3]> {
    let (d, _) = normalize_direction(dir)?;
    let degree = degree.min(degree_for_len(coeffs.len()));
    let b = basis(degree, d);
    let mut rgb = [0.5; 3];
    for (k, coeff) in coeffs.iter().take(coeff_count(degree)).enumerate() {
        for c in 0..3 {
            rgb[c] += b[k] * coeff[c];
        }
    }
    Ok(rgb)
}

/// View-dependent color, clamped to be non-negative.
pub fn evaluate_sh(coeffs: &[[f64; 3]], degree: usize, dir: [f64; 3]) -> Result<[f64; 3]> {
    let rgb = evaluate_unclamped(coeffs, degree, dir)?;
    Ok(rgb.map(|v| v.max(0.0)))
}

fn degree_for_len(len: usize) -> usize {
    (0..=MAX_SH_DEGREE)
        .rev()
        .find(|&d| coeff_count(d) <= len)
        .unwrap_or(0)
}
