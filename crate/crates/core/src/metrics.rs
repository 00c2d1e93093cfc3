//! Image-quality and trait-accuracy metrics.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR in dB for images in [0, 1]. Identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with_max(a, b, 1.0)
}

pub fn psnr_with_max(a: &Image, b: &Image, max_intensity: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(psnr_from_mse(mse(a.data(), b.data()), max_intensity))
}

/// PSNR of 8-bit buffers, with a peak of 255.
pub fn psnr_u8(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    Ok(psnr_from_mse(mse(&fa, &fb), 255.0))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn psnr_from_mse(mse: f64, max: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max * max / mse).log10()
    }
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    crate::optim::ssim(a, b)
}

/// One layer of precomputed deep features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub id: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `H x W x C`, unit length per spatial location.
    pub features: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStack {
    pub layers: Vec<FeatureLayer>,
}

const FEATURE_MAGIC: &[u8; 4] = b"FSTK";
const FEATURE_VERSION: u32 = 1;
/// Tolerance on the unit norm of stored feature vectors.
pub const FEATURE_NORM_TOL: f64 = 1e-5;

impl FeatureLayer {
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.features.len() != n * self.channels || self.weights.len() != self.channels {
            return Err(Error::DimensionMismatch(format!("feature layer {} has inconsistent sizes", self.id)));
        }
        if self.channels == 0 {
            return Ok(());
        }
        for (i, v) in self.features.chunks_exact(self.channels).enumerate() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > FEATURE_NORM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "feature layer {} location {i} has norm {norm}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

impl FeatureStack {
    pub fn validate(&self) -> Result<()> {
        self.layers.iter().try_for_each(FeatureLayer::validate)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for v in [l.id, l.height as u32, l.width as u32, l.channels as u32] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for l in &self.layers {
            for &v in l.features.iter().chain(&l.weights) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0usize;
        let err = |offset: usize, message: &str| Error::Binary {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: message.to_string(),
        };
        let mut take = |n: usize| -> Result<&[u8]> {
            let slice = bytes.get(pos..pos + n).ok_or_else(|| err(pos, "unexpected end of file"))?;
            pos += n;
            Ok(slice)
        };
        if take(4)? != FEATURE_MAGIC {
            return Err(err(0, "missing FSTK magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != FEATURE_VERSION {
            return Err(err(4, &format!("unsupported version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let mut headers = Vec::new();
        for _ in 0..count {
            let h: Vec<u32> = (0..4).map(|_| take(4).map(u32_at)).collect::<Result<_>>()?;
            headers.push(h);
        }
        let mut layers = Vec::with_capacity(count);
        for h in headers {
            let (height, width, channels) = (h[1] as usize, h[2] as usize, h[3] as usize);
            let mut read = |n: usize| -> Result<Vec<f64>> {
                let raw = take(n.checked_mul(4).ok_or_else(|| err(0, "layer too large"))?)?;
                Ok(raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect())
            };
            let features = read(height * width * channels)?;
            let weights = read(channels)?;
            layers.push(FeatureLayer {
                id: h[0],
                height,
                width,
                channels,
                features,
                weights,
            });
        }
        if pos != bytes.len() {
            return Err(err(pos, "trailing bytes after last layer"));
        }
        Ok(Self { layers })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Weighted squared feature distance averaged over each layer's locations
/// and summed over layers.
pub fn lpips_from_features(fa: &FeatureStack, fb: &FeatureStack) -> Result<f64> {
    if fa.layers.len() != fb.layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} feature layers",
            fa.layers.len(),
            fb.layers.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in fa.layers.iter().zip(&fb.layers) {
        if (a.id, a.height, a.width, a.channels) != (b.id, b.height, b.width, b.channels) || a.weights != b.weights {
            return Err(Error::DimensionMismatch(format!("feature layer {} does not match layer {}", a.id, b.id)));
        }
        a.validate()?;
        b.validate()?;
        let locations = a.height * a.width;
        if locations == 0 {
            continue;
        }
        let mut layer = 0.0;
        for (va, vb) in a.features.chunks_exact(a.channels.max(1)).zip(b.features.chunks_exact(a.channels.max(1))) {
            layer += va
                .iter()
                .zip(vb)
                .zip(&a.weights)
                .map(|((x, y), w)| {
                    let d = w * (x - y);
                    d * d
                })
                .sum::<f64>();
        }
        total += layer / locations as f64;
    }
    Ok(total)
}

/// Paired ground-truth and estimated trait values.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitSeries {
    truth: Vec<f64>,
    estimate: Vec<f64>,
}

impl TraitSeries {
    pub fn new(truth: Vec<f64>, estimate: Vec<f64>) -> Result<Self> {
        if truth.len() != estimate.len() {
            return Err(Error::InvalidSeries(format!(
                "{} ground-truth values vs {} estimates",
                truth.len(),
                estimate.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::InvalidSeries("empty series".into()));
        }
        if truth.iter().chain(&estimate).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries("non-finite value".into()));
        }
        Ok(Self { truth, estimate })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.truth.iter().copied().zip(self.estimate.iter().copied())
    }

    pub fn r2(&self) -> Result<f64> {
        let n = self.len() as f64;
        let mean = self.truth.iter().sum::<f64>() / n;
        let ss_tot: f64 = self.truth.iter().map(|y| (y - mean) * (y - mean)).sum();
        if ss_tot == 0.0 {
            return Err(Error::InvalidSeries("ground truth has zero variance".into()));
        }
        let ss_res: f64 = self.pairs().map(|(y, e)| (y - e) * (y - e)).sum();
        Ok(1.0 - ss_res / ss_tot)
    }

    pub fn rmse(&self) -> f64 {
        (self.pairs().map(|(y, e)| (y - e) * (y - e)).sum::<f64>() / self.len() as f64).sqrt()
    }

    pub fn mae(&self) -> f64 {
        self.pairs().map(|(y, e)| (y - e).abs()).sum::<f64>() / self.len() as f64
    }

    /// Mean absolute percentage error, in percent.
    pub fn mape(&self) -> Result<f64> {
        if self.truth.contains(&0.0) {
            return Err(Error::InvalidSeries("zero ground-truth value".into()));
        }
        Ok(100.0 * self.pairs().map(|(y, e)| ((y - e) / y).abs()).sum::<f64>() / self.len() as f64)
    }

    /// `100 - MAPE`, in percent.
    pub fn accuracy(&self) -> Result<f64> {
        Ok(100.0 - self.mape()?)
    }
}
