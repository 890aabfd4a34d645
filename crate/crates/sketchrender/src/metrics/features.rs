//! Fixed random-weight convolutional feature extractor and Gaussian
//! moment estimation for the Fréchet metric.
//!
//! A pretrained classifier backbone is deliberately out of scope, so the
//! feature map is a named, seed-pinned stack of random convolutions with
//! global average pooling. Random projections preserve enough geometry to
//! rank distribution drift, and the name travels with every report so the
//! numbers are never mistaken for classifier-based scores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_raw, Tensor};

const DEFAULT_SEED: u64 = 0xFEA7_0001;

/// Deterministic image-batch-to-vector map.
pub struct FeatureExtractor {
    name: String,
    kernels: Vec<Tensor>,
    dim: usize,
}

impl FeatureExtractor {
    /// The default extractor: three stride-2 random 3x3 convolutions with
    /// leaky-ReLU, global average pooling, 64 output features.
    pub fn default_randconv() -> Self {
        Self::with_seed("randconv64-v1", DEFAULT_SEED)
    }

    pub fn with_seed(name: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [(3usize, 16usize), (16, 32), (32, 64)];
        let kernels = widths
            .iter()
            .map(|&(cin, cout)| {
                let std = (2.0 / (cin * 9) as f32).sqrt();
                Tensor::randn(&mut rng, vec![cout, cin, 3, 3], std)
            })
            .collect();
        FeatureExtractor {
            name: name.into(),
            kernels,
            dim: 64,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Map one `[h,w]`, `[1,h,w]` or `[3,h,w]` image to `dim` features.
    pub fn features(&self, image: &Tensor) -> Result<Vec<f64>> {
        let (c, h, w) = match image.rank() {
            2 => (1, image.shape()[0], image.shape()[1]),
            3 => (image.shape()[0], image.shape()[1], image.shape()[2]),
            _ => {
                return Err(Error::shape(
                    "features",
                    format!("expected rank 2 or 3, got {:?}", image.shape()),
                ))
            }
        };
        if h < 8 || w < 8 {
            return Err(Error::invalid(
                "features",
                format!("image {h}x{w} too small, need at least 8x8"),
            ));
        }
        let mut x = match c {
            1 => {
                let mut data = Vec::with_capacity(3 * h * w);
                for _ in 0..3 {
                    data.extend_from_slice(&image.data()[..h * w]);
                }
                Tensor::new(vec![1, 3, h, w], data)?
            }
            3 => Tensor::new(vec![1, 3, h, w], image.data().to_vec())?,
            _ => {
                return Err(Error::shape(
                    "features",
                    format!("expected 1 or 3 channels, got {c}"),
                ))
            }
        };
        for kernel in &self.kernels {
            x = conv2d_raw(&x, kernel, 2, 1)?;
            for v in x.data_mut() {
                if *v < 0.0 {
                    *v *= 0.2;
                }
            }
        }
        let (chans, oh, ow) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let mut out = Vec::with_capacity(chans);
        for ci in 0..chans {
            let plane = &x.data()[ci * oh * ow..(ci + 1) * oh * ow];
            let sum: f64 = plane.iter().map(|&v| v as f64).sum();
            out.push(sum / (oh * ow) as f64);
        }
        Ok(out)
    }
}

/// Sample mean and unbiased covariance of a list of feature vectors.
fn moments(features: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid(
            "feature_stats",
            "need at least two images for a covariance",
        ));
    }
    let d = features[0].len();
    let mut mu = vec![0.0f64; d];
    for f in features {
        if f.len() != d {
            return Err(Error::shape("feature_stats", "inconsistent feature dims"));
        }
        for (m, &v) in mu.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for f in features {
        for j in 0..d {
            let dj = f[j] - mu[j];
            for k in 0..d {
                cov[j * d + k] += dj * (f[k] - mu[k]);
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    Ok((mu, cov))
}

/// Extract features from every image and summarize them as a Gaussian.
pub fn feature_stats(
    images: &[Tensor],
    extractor: &FeatureExtractor,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let feats = images
        .iter()
        .map(|img| extractor.features(img))
        .collect::<Result<Vec<_>>>()?;
    moments(&feats)
}
