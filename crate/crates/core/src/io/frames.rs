//! RGBA frames: alpha carries the foreground mask.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::image::Image;

pub const ALPHA_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbaFrame {
    /// RGB in [0, 1], values divided by 255 without gamma decoding.
    pub rgb: Image,
    /// Binary mask, `None` when the file has no alpha and none was required.
    pub mask: Option<Image>,
}

/// Output size of an area downsample: floor division, at least one pixel.
pub fn downsampled_size(width: usize, height: usize, factor: usize) -> (usize, usize) {
    ((width / factor).max(1), (height / factor).max(1))
}

/// Mean over `factor`×`factor` cells. When the size is not a multiple of the
/// factor the last row and column of cells stretch to the image edge.
pub fn area_downsample(src: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::InvalidParameter("downsample factor must be at least 1".into()));
    }
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let (ow, oh) = downsampled_size(w, h, factor);
    let span = |i: usize, n_out: usize, n_in: usize| {
        let lo = i * factor;
        let hi = if i + 1 == n_out { n_in } else { lo + factor };
        lo..hi
    };
    let mut out = Image::new(ow, oh, ch);
    for oy in 0..oh {
        for ox in 0..ow {
            let (xs, ys) = (span(ox, ow, w), span(oy, oh, h));
            let count = (xs.len() * ys.len()) as f64;
            for c in 0..ch {
                let mut sum = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        sum += src.get(x, y, c);
                    }
                }
                out.set(ox, oy, c, sum / count);
            }
        }
    }
    Ok(out)
}

pub fn binarize(mask: &Image) -> Image {
    mask.map(|a| if a >= ALPHA_THRESHOLD { 1.0 } else { 0.0 })
}

/// Reads a PNG, averages `factor`×`factor` cells and re-binarizes alpha at 0.5.
/// Without an alpha channel this fails unless `require_alpha` is false.
pub fn load_rgba(path: &Path, factor: usize, require_alpha: bool) -> Result<RgbaFrame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let has_alpha = img.color().has_alpha();
    if !has_alpha && require_alpha {
        return Err(Error::MissingMask(path.to_path_buf()));
    }
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut rgb = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    for (x, y, p) in rgba.enumerate_pixels() {
        for c in 0..3 {
            rgb.set(x as usize, y as usize, c, p[c] as f64 / 255.0);
        }
        alpha.set(x as usize, y as usize, 0, p[3] as f64 / 255.0);
    }
    let rgb = area_downsample(&rgb, factor)?;
    let mask = if has_alpha {
        Some(binarize(&area_downsample(&alpha, factor)?))
    } else {
        None
    };
    Ok(RgbaFrame { rgb, mask })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes RGB plus a single-channel mask as 8-bit RGBA, or plain RGB when
/// there is no mask so the frame reads back mask-less.
pub fn write_rgba(path: &Path, rgb: &Image, mask: Option<&Image>) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3 channels, got {}", rgb.channels())));
    }
    let Some(m) = mask else {
        return write_rgb(path, rgb);
    };
    if m.width() != rgb.width() || m.height() != rgb.height() || m.channels() != 1 {
        return Err(Error::DimensionMismatch("mask does not match the image".into()));
    }
    let buf = ImageBuffer::from_fn(rgb.width() as u32, rgb.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let a = to_byte(m.get(x, y, 0));
        Rgba([to_byte(rgb.get(x, y, 0)), to_byte(rgb.get(x, y, 1)), to_byte(rgb.get(x, y, 2)), a])
    });
    save(path, buf)
}

fn save<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    path: &Path,
    buf: ImageBuffer<P, Vec<S>>,
) -> Result<()>
where
    [S]: image::EncodableLayout,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// 8-bit RGB PNG.
pub fn write_rgb(path: &Path, rgb: &Image) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3 channels, got {}", rgb.channels())));
    }
    let buf = ImageBuffer::from_fn(rgb.width() as u32, rgb.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([to_byte(rgb.get(x, y, 0)), to_byte(rgb.get(x, y, 1)), to_byte(rgb.get(x, y, 2))])
    });
    save(path, buf)
}

/// Single channel in [0, 1] as a 16-bit grayscale PNG.
pub fn write_gray16(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::DimensionMismatch(format!("expected 1 channel, got {}", img.channels())));
    }
    let data = img.to_u16();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer matches the image size");
    save(path, buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_block_to_one_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        write_rgba(&p, &Image::filled(4, 4, 3, 1.0), Some(&Image::filled(4, 4, 1, 1.0))).unwrap();
        let f = load_rgba(&p, 4, true).unwrap();
        assert_eq!(f.rgb.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(f.mask.unwrap().data(), &[1.0]);
    }

    #[test]
    fn sixteen_bit_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_vec(2, 1, 1, vec![0.0, 0.5]).unwrap();
        write_gray16(&p, &img).unwrap();
        let back = image::open(&p).unwrap().into_luma16();
        assert_eq!(back.into_raw(), vec![0, 32768]);
    }

    #[test]
    fn half_covered_alpha_rounds_up() {
        let mut a = Image::new(2, 2, 1);
        a.set(0, 0, 0, 1.0);
        a.set(1, 1, 0, 1.0);
        assert_eq!(binarize(&area_downsample(&a, 2).unwrap()).data(), &[1.0]);
    }

    #[test]
    fn odd_sizes_match_direct_average() {
        let (w, h) = (7, 5);
        let data: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let img = Image::from_vec(w, h, 1, data.clone()).unwrap();
        let out = area_downsample(&img, 2).unwrap();
        assert_eq!((out.width(), out.height()), (3, 2));
        // Last column covers x = 4..7, last row y = 2..5.
        let direct = |x0: usize, x1: usize, y0: usize, y1: usize| {
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += data[y * w + x];
                }
            }
            s / ((x1 - x0) * (y1 - y0)) as f64
        };
        assert_eq!(out.get(2, 1, 0), direct(4, 7, 2, 5));
        assert_eq!(out.get(0, 0, 0), direct(0, 2, 0, 2));
        assert_eq!(out.get(1, 1, 0), direct(2, 4, 2, 5));
    }

    #[test]
    fn mean_is_preserved_for_aligned_sizes() {
        let data: Vec<f64> = (0..8 * 12 * 3).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let img = Image::from_vec(8, 12, 3, data).unwrap();
        assert!((area_downsample(&img, 4).unwrap().mean() - img.mean()).abs() < 1e-6);
    }

    #[test]
    fn rgb_only_png_needs_opt_in() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([10, 20, 30])).save(&p).unwrap();
        assert!(matches!(load_rgba(&p, 1, true), Err(Error::MissingMask(_))));
        let f = load_rgba(&p, 1, false).unwrap();
        assert!(f.mask.is_none());
        assert_eq!(f.rgb.get(1, 1, 2), 30.0 / 255.0);
        let again = dir.path().join("again.png");
        write_rgba(&again, &f.rgb, None).unwrap();
        assert!(load_rgba(&again, 1, false).unwrap().mask.is_none());
    }
}
