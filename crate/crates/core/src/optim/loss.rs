//! Photometric losses: L1 blended with D-SSIM, optionally restricted to a
//! binary foreground mask.

use crate::error::{Error, Result};
use crate::image::Image;

use super::ssim::{ssim, ssim_with_grad};

/// Loss value and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub l1: f64,
    /// `1 - SSIM`; zero when the SSIM weight is zero.
    pub dssim: f64,
    /// Set when a mask was given but selects no pixel.
    pub empty_mask: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("SSIM weight {lambda} outside [0, 1]")));
    }
    Ok(())
}

fn check_mask(mask: &Image, target: &Image) -> Result<usize> {
    if mask.channels() != 1 || mask.width() != target.width() || mask.height() != target.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{}x{} for a {}x{} image",
            mask.width(),
            mask.height(),
            mask.channels(),
            target.width(),
            target.height()
        )));
    }
    let mut count = 0;
    for &m in mask.data() {
        if m == 1.0 {
            count += 1;
        } else if m != 0.0 {
            return Err(Error::InvalidParameter(format!("mask value {m} is not binary")));
        }
    }
    Ok(count)
}

/// Evaluates the loss of `render` against `target` and, when `want_grad`,
/// its gradient with respect to `render`.
///
/// With a mask the L1 term averages over foreground pixel channels and SSIM
/// compares the mask-multiplied images.
pub fn photometric_loss(
    target: &Image,
    mask: Option<&Image>,
    render: &Image,
    lambda: f64,
    want_grad: bool,
) -> Result<(LossTerms, Option<Image>)> {
    check_lambda(lambda)?;
    target.check_same_shape(render)?;
    let (w, h, ch) = (target.width(), target.height(), target.channels());
    let selected = match mask {
        Some(m) => check_mask(m, target)?,
        None => w * h,
    };
    if selected == 0 {
        let grad = want_grad.then(|| Image::new(w, h, ch));
        return Ok((
            LossTerms {
                empty_mask: mask.is_some(),
                ..LossTerms::default()
            },
            grad,
        ));
    }
    let weight = |i: usize| mask.map_or(1.0, |m| m.data()[i / ch]);
    let norm = (selected * ch) as f64;

    let mut l1_sum = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, ch));
    for (i, (&t, &r)) in target.data().iter().zip(render.data()).enumerate() {
        let m = weight(i);
        l1_sum += (r - t).abs() * m;
        if let Some(g) = grad.as_mut() {
            let sign = if r > t {
                1.0
            } else if r < t {
                -1.0
            } else {
                0.0
            };
            g.data_mut()[i] = (1.0 - lambda) * sign * m / norm;
        }
    }
    let l1 = l1_sum / norm;

    let mut dssim = 0.0;
    if lambda > 0.0 {
        let (t, r) = match mask {
            Some(m) => (target.masked(m)?, render.masked(m)?),
            None => (target.clone(), render.clone()),
        };
        if let Some(g) = grad.as_mut() {
            let (s, ds) = ssim_with_grad(&t, &r)?;
            dssim = 1.0 - s;
            for (i, (gv, d)) in g.data_mut().iter_mut().zip(ds.data()).enumerate() {
                *gv -= lambda * d * weight(i);
            }
        } else {
            dssim = 1.0 - ssim(&t, &r)?;
        }
    }
    let terms = LossTerms {
        total: (1.0 - lambda) * l1 + lambda * dssim,
        l1,
        dssim,
        empty_mask: false,
    };
    Ok((terms, grad))
}

/// `(1 - λ)·mean|C - Ĉ| + λ·(1 - SSIM(C, Ĉ))`.
pub fn loss_unmasked(target: &Image, render: &Image, lambda: f64) -> Result<f64> {
    Ok(photometric_loss(target, None, render, lambda, false)?.0.total)
}

/// Foreground-only loss; an empty mask gives zero with `empty_mask` set.
pub fn loss_masked(target: &Image, mask: &Image, render: &Image, lambda: f64) -> Result<LossTerms> {
    Ok(photometric_loss(target, Some(mask), render, lambda, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, phase: f64) -> Image {
        let mut img = Image::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(x, y, c, 0.5 + 0.4 * ((x * 3 + y * 5 + c) as f64 * 0.37 + phase).sin());
                }
            }
        }
        img
    }

    fn half_mask(w: usize, h: usize) -> Image {
        let mut m = Image::new(w, h, 1);
        for y in 0..h {
            for x in 0..w / 2 {
                m.set(x, y, 0, 1.0);
            }
        }
        m
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = textured(16, 16, 0.0);
        for lambda in [0.0, 0.2, 1.0] {
            assert!(loss_unmasked(&a, &a, lambda).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn pure_l1_of_constants() {
        let a = Image::uniform(8, 8, &[0.0; 3]);
        let b = Image::uniform(8, 8, &[0.25; 3]);
        assert_eq!(loss_unmasked(&a, &b, 0.0).unwrap(), 0.25);
    }

    #[test]
    fn full_mask_matches_unmasked() {
        let (a, b) = (textured(16, 14, 0.0), textured(16, 14, 1.0));
        let ones = Image::filled(16, 14, 1, 1.0);
        for lambda in [0.0, 0.2, 1.0] {
            assert_eq!(
                loss_masked(&a, &ones, &b, lambda).unwrap().total,
                loss_unmasked(&a, &b, lambda).unwrap()
            );
        }
    }

    #[test]
    fn empty_mask_is_zero_and_flagged() {
        let (a, b) = (textured(8, 8, 0.0), textured(8, 8, 1.0));
        let terms = loss_masked(&a, &Image::new(8, 8, 1), &b, 0.2).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(terms.empty_mask);
    }

    #[test]
    fn background_differences_are_ignored() {
        let a = textured(12, 12, 0.0);
        let mask = half_mask(12, 12);
        let mut b = a.clone();
        for y in 0..12 {
            for x in 6..12 {
                b.set(x, y, 1, 0.9);
            }
        }
        assert_eq!(loss_masked(&a, &mask, &b, 0.0).unwrap().total, 0.0);
        assert_eq!(loss_masked(&a, &mask, &b, 0.2).unwrap().total, 0.0);
    }

    #[test]
    fn rejects_non_binary_masks_and_bad_lambda() {
        let a = textured(8, 8, 0.0);
        assert!(loss_masked(&a, &Image::filled(8, 8, 1, 0.5), &a, 0.2).is_err());
        assert!(loss_unmasked(&a, &a, 1.5).is_err());
        assert!(loss_unmasked(&a, &Image::new(8, 7, 3), 0.2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = textured(14, 12, 0.0);
        let b = textured(14, 12, 0.6);
        let mask = half_mask(14, 12);
        for m in [None, Some(&mask)] {
            let (_, g) = photometric_loss(&a, m, &b, 0.2, true).unwrap();
            let g = g.unwrap();
            let h = 1e-6;
            for &(x, y, c) in &[(0, 0, 0), (3, 5, 2), (10, 7, 1), (6, 11, 0)] {
                let mut bp = b.clone();
                bp.set(x, y, c, b.get(x, y, c) + h);
                let mut bm = b.clone();
                bm.set(x, y, c, b.get(x, y, c) - h);
                let f = |img: &Image| photometric_loss(&a, m, img, 0.2, false).unwrap().0.total;
                let fd = (f(&bp) - f(&bm)) / (2.0 * h);
                assert!((fd - g.get(x, y, c)).abs() < 1e-7, "{fd} vs {}", g.get(x, y, c));
            }
        }
    }
}
