use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{CameraView, GaussianScene};

use super::project::{cull_and_project, Projection};
use super::{RasterOptions, RenderOutput, Splat2D, ALPHA_MAX};

/// Per-tile splat lists, each in global front-to-back order.
#[derive(Debug, Clone)]
pub(crate) struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn tile_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Front-to-back ordering: camera depth, then source index.
pub(crate) fn depth_order(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].index.cmp(&splats[b].index))
            .then(a.cmp(&b))
    });
    order
}

fn pixel_span(center: f64, half: f64, len: usize) -> Option<(usize, usize)> {
    // Pixel i is covered when its center i + 0.5 lies in [center - half, center + half].
    let lo = (center - half - 0.5).ceil().max(0.0);
    let hi = (center + half - 0.5).floor().min(len as f64 - 1.0);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

pub(crate) fn bin_splats(splats: &[Splat2D], width: usize, height: usize, options: &RasterOptions) -> TileBins {
    let ts = options.tile_size;
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let cutoff = options.contribution_cutoff();
    for k in depth_order(splats) {
        let s = &splats[k];
        let Some([ex, ey]) = s.half_extent(cutoff) else {
            continue;
        };
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_span(s.mean2d[0], ex, width), pixel_span(s.mean2d[1], ey, height))
        else {
            continue;
        };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    TileBins {
        tile_size: ts,
        tiles_x,
        lists,
    }
}

/// Composites one pixel; `visit` sees each composited splat as
/// `(list position, α′, unclamped α·G, transmittance before it)`.
#[inline]
pub(crate) fn composite_pixel(
    splats: &[Splat2D],
    list: &[u32],
    px: f64,
    py: f64,
    options: &RasterOptions,
    mut visit: impl FnMut(usize, f64, f64, f64),
) -> ([f64; 3], f64) {
    let cutoff = options.contribution_cutoff();
    let mut t = 1.0;
    let mut color = [0.0; 3];
    for (pos, &k) in list.iter().enumerate() {
        let s = &splats[k as usize];
        let raw = s.raw_alpha(px, py);
        let alpha = raw.min(ALPHA_MAX);
        if alpha < cutoff {
            continue;
        }
        visit(pos, alpha, raw, t);
        let w = alpha * t;
        for c in 0..3 {
            color[c] += s.color[c] * w;
        }
        t *= 1.0 - alpha;
        if let Some(min_t) = options.min_transmittance {
            if t < min_t {
                break;
            }
        }
    }
    (color, t)
}

fn composite(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: [f64; 3],
    options: &RasterOptions,
) -> Result<(RenderOutput, TileBins)> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("image dimensions must be non-zero".into()));
    }
    if options.tile_size == 0 {
        return Err(Error::InvalidParameter("tile size must be non-zero".into()));
    }
    let bins = bin_splats(splats, width, height, options);
    let tiles: Vec<Vec<([f64; 3], f64)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = bins.tile_rect(tile, width, height);
            let list = &bins.lists[tile];
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    out.push(composite_pixel(splats, list, x as f64 + 0.5, y as f64 + 0.5, options, |_, _, _, _| {}));
                }
            }
            out
        })
        .collect();

    let mut output = RenderOutput::new(width, height, background);
    for (tile, pixels) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, _) = bins.tile_rect(tile, width, height);
        let tw = x1 - x0;
        for (i, (color, t)) in pixels.into_iter().enumerate() {
            output.write_pixel(x0 + i % tw, y0 + i / tw, color, t);
        }
    }
    Ok((output, bins))
}

/// Tiled compositing of screen-space splats against `background`.
pub fn rasterize(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: [f64; 3],
    options: &RasterOptions,
) -> Result<RenderOutput> {
    for s in splats {
        let [a, b, c] = s.cov2d;
        if !(a > 0.0 && a * c - b * b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "splat {} has a covariance that is not positive definite",
                s.index
            )));
        }
    }
    Ok(composite(splats, width, height, background, options)?.0)
}

/// A forward pass with the state needed to backpropagate through it.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: RenderOutput,
    /// Visible splats in scene order.
    pub projections: Vec<Projection>,
    pub(crate) splats2d: Vec<Splat2D>,
    pub(crate) bins: TileBins,
    pub(crate) options: RasterOptions,
}

impl Forward {
    /// Scene indices of the splats that survived culling.
    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        self.projections.iter().map(|p| p.splat.index)
    }
}

pub fn forward(
    scene: &GaussianScene,
    camera: &CameraView,
    background: [f64; 3],
    options: &RasterOptions,
) -> Result<Forward> {
    camera.validate()?;
    let projections = cull_and_project(scene, camera, options);
    let splats2d: Vec<Splat2D> = projections.iter().map(|p| p.splat.clone()).collect();
    let (output, bins) = composite(&splats2d, camera.width, camera.height, background, options)?;
    Ok(Forward {
        output,
        projections,
        splats2d,
        bins,
        options: options.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(index: usize, mean: [f64; 2], depth: f64, color: [f64; 3], opacity: f64) -> Splat2D {
        Splat2D::new(index, mean, [1.0, 0.0, 1.0], depth, color, opacity)
    }

    #[test]
    fn empty_list_gives_background() {
        let bg = [0.2, 0.4, 0.6];
        let out = rasterize(&[], 5, 3, bg, &RasterOptions::default()).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(out.rgb.pixel(x, y), &bg);
                assert_eq!(out.alpha_acc.get(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn single_splat_at_center() {
        let c = [0.9, 0.1, 0.5];
        let bg = [0.3, 0.6, 0.0];
        let out = rasterize(&[splat(0, [2.5, 2.5], 1.0, c, 0.8)], 5, 5, bg, &RasterOptions::default()).unwrap();
        for ch in 0..3 {
            let expected = 0.8 * c[ch] + 0.2 * bg[ch];
            assert!((out.rgb.get(2, 2, ch) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layers_at_half_opacity() {
        let (c1, c2, bg) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        // Listed back-to-front to exercise the internal sort.
        let splats = [splat(1, [0.5, 0.5], 2.0, c2, 0.5), splat(0, [0.5, 0.5], 1.0, c1, 0.5)];
        let out = rasterize(&splats, 1, 1, bg, &RasterOptions::default()).unwrap();
        assert_eq!(out.rgb.pixel(0, 0), &[0.5, 0.25, 0.25]);
        assert_eq!(out.alpha_acc.get(0, 0, 0), 0.75);
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(rasterize(&[], 0, 4, [0.0; 3], &RasterOptions::default()).is_err());
    }

    #[test]
    fn non_positive_definite_rejected() {
        let bad = Splat2D::new(0, [1.0, 1.0], [1.0, 2.0, 1.0], 1.0, [0.5; 3], 0.5);
        assert!(rasterize(&[bad], 4, 4, [0.0; 3], &RasterOptions::default()).is_err());
    }

    #[test]
    fn opacity_is_clamped() {
        let out = rasterize(&[splat(0, [0.5, 0.5], 1.0, [1.0; 3], 1.0)], 1, 1, [0.0; 3], &RasterOptions::default())
            .unwrap();
        assert_eq!(out.alpha_acc.get(0, 0, 0), 0.99);
    }
}
