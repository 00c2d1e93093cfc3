//! Gaussian-windowed SSIM and its gradient with respect to the second image.
//!
//! Windows are applied as a separable valid convolution, so the map is
//! `(w - k + 1) x (h - k + 1)` per channel. Images smaller than the window
//! use the largest odd window that fits.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone)]
pub struct SsimMap {
    /// Per-pixel, per-channel SSIM over the valid region.
    pub map: Image,
    pub mean: f64,
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Window actually used for an image of the given size.
pub fn effective_window(width: usize, height: usize, window: usize) -> usize {
    let w = window.min(width).min(height);
    if w.is_multiple_of(2) {
        w.saturating_sub(1)
    } else {
        w
    }
}

// Planes are row-major single-channel buffers.
fn conv_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

// Adjoint of `conv_valid`: spreads an output-sized plane back onto the input grid.
fn conv_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for i in 0..n {
                tmp[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).copied().collect()
}

struct Stats {
    mx: Vec<f64>,
    my: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
}

fn window_stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64]) -> Stats {
    let mx = conv_valid(x, w, h, k);
    let my = conv_valid(y, w, h, k);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let exx = conv_valid(&sq(x, x), w, h, k);
    let eyy = conv_valid(&sq(y, y), w, h, k);
    let exy = conv_valid(&sq(x, y), w, h, k);
    let sxx = exx.iter().zip(&mx).map(|(e, m)| e - m * m).collect();
    let syy = eyy.iter().zip(&my).map(|(e, m)| e - m * m).collect();
    let sxy = exy.iter().zip(mx.iter().zip(&my)).map(|(e, (a, b))| e - a * b).collect();
    Stats { mx, my, sxx, syy, sxy }
}

fn check_inputs(a: &Image, b: &Image) -> Result<usize> {
    a.check_same_shape(b)?;
    if a.width() == 0 || a.height() == 0 {
        return Err(Error::InvalidParameter("SSIM of an empty image".into()));
    }
    Ok(effective_window(a.width(), a.height(), SSIM_WINDOW))
}

pub fn ssim_map(a: &Image, b: &Image) -> Result<SsimMap> {
    let win = check_inputs(a, b)?;
    let k = gaussian_kernel(win, SSIM_SIGMA);
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let (ow, oh) = (w - win + 1, h - win + 1);
    let mut map = Image::new(ow, oh, ch);
    for c in 0..ch {
        let s = window_stats(&plane(a, c), &plane(b, c), w, h, &k);
        for i in 0..ow * oh {
            let num = (2.0 * s.mx[i] * s.my[i] + SSIM_C1) * (2.0 * s.sxy[i] + SSIM_C2);
            let den = (s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + SSIM_C1) * (s.sxx[i] + s.syy[i] + SSIM_C2);
            map.set(i % ow, i / ow, c, num / den);
        }
    }
    let mean = map.mean();
    Ok(SsimMap { map, mean })
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean)
}

/// Mean SSIM of `(x, y)` and its gradient with respect to `y`.
pub fn ssim_with_grad(x: &Image, y: &Image) -> Result<(f64, Image)> {
    let win = check_inputs(x, y)?;
    let k = gaussian_kernel(win, SSIM_SIGMA);
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    let (ow, oh) = (w - win + 1, h - win + 1);
    let count = (ow * oh * ch) as f64;
    let mut total = 0.0;
    let mut grad = Image::new(w, h, ch);
    for c in 0..ch {
        let xp = plane(x, c);
        let yp = plane(y, c);
        let s = window_stats(&xp, &yp, w, h, &k);
        let n = ow * oh;
        let (mut g_mu, mut g_yy, mut g_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (mx, my) = (s.mx[i], s.my[i]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * s.sxy[i] + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = s.sxx[i] + s.syy[i] + SSIM_C2;
            let v = a1 * a2 / (b1 * b2);
            total += v;
            let up = v / count;
            // S as a function of (my, E[y²], E[xy]) with sxy = E[xy] - mx·my, syy = E[y²] - my².
            g_mu[i] = up * (2.0 * mx / a1 - 2.0 * mx / a2 - 2.0 * my / b1 + 2.0 * my / b2);
            g_yy[i] = -up / b2;
            g_xy[i] = 2.0 * up / a2;
        }
        let d_mu = conv_valid_adjoint(&g_mu, w, h, &k);
        let d_yy = conv_valid_adjoint(&g_yy, w, h, &k);
        let d_xy = conv_valid_adjoint(&g_xy, w, h, &k);
        for q in 0..w * h {
            grad.set(q % w, q / w, c, d_mu[q] + 2.0 * yp[q] * d_yy[q] + xp[q] * d_xy[q]);
        }
    }
    Ok((total / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, phase: f64) -> Image {
        let mut img = Image::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = 0.5 + 0.4 * ((x as f64 * 0.7 + y as f64 * 0.3 + c as f64 + phase).sin());
                    img.set(x, y, c, v);
                }
            }
        }
        img
    }

    #[test]
    fn identical_images_score_one() {
        let a = ramp(20, 16, 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let g = Image::uniform(16, 16, &[0.5; 3]);
        assert_eq!(ssim(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn black_versus_white() {
        let a = Image::uniform(16, 16, &[0.0; 3]);
        let b = Image::uniform(16, 16, &[1.0; 3]);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(ssim(&Image::new(8, 8, 3), &Image::new(8, 9, 3)).is_err());
    }

    #[test]
    fn small_images_shrink_window() {
        assert_eq!(effective_window(6, 20, 11), 5);
        assert_eq!(effective_window(7, 20, 11), 7);
        let a = ramp(6, 6, 0.0);
        let m = ssim_map(&a, &ramp(6, 6, 0.3)).unwrap();
        assert_eq!((m.map.width(), m.map.height()), (2, 2));
    }

    #[test]
    fn adjoint_identity() {
        let (w, h) = (13, 12);
        let k = gaussian_kernel(5, 1.5);
        let a: Vec<f64> = (0..w * h).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let b: Vec<f64> = (0..(w - 4) * (h - 4)).map(|i| ((i * 5) % 13) as f64 / 13.0).collect();
        let lhs: f64 = conv_valid(&a, w, h, &k).iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = conv_valid_adjoint(&b, w, h, &k).iter().zip(&a).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = ramp(14, 13, 0.0);
        let y = ramp(14, 13, 0.8);
        let (_, grad) = ssim_with_grad(&x, &y).unwrap();
        let h = 1e-6;
        for &(px, py, c) in &[(0, 0, 0), (5, 6, 1), (13, 12, 2), (7, 3, 0)] {
            let mut yp = y.clone();
            yp.set(px, py, c, y.get(px, py, c) + h);
            let mut ym = y.clone();
            ym.set(px, py, c, y.get(px, py, c) - h);
            let fd = (ssim(&x, &yp).unwrap() - ssim(&x, &ym).unwrap()) / (2.0 * h);
            let an = grad.get(px, py, c);
            assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1e-4), "{fd} vs {an}");
        }
    }
}
