//! Multi-scale structural similarity.
//!
//! Follows the reference formulation: a Gaussian-windowed SSIM with valid
//! (no-padding) filtering, contrast-structure terms collected at every
//! scale, the luminance term only at the coarsest, 2x2 mean pooling
//! between scales, and the canonical per-scale weight exponents. All
//! arithmetic is f64; both orientations of the argument pair run through
//! identical operations, so the score is exactly symmetric.

use crate::error::{Error, Result};
use crate::gray::to_gray;
use crate::tensor::Tensor;

/// Canonical five-scale exponents.
pub const REFERENCE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimParams {
    pub scales: usize,
    /// Per-scale exponents; must sum to 1.
    pub weights: Vec<f64>,
    /// Gaussian window size (odd).
    pub window: usize,
    /// Gaussian window standard deviation.
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of the input values.
    pub range: f64,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        MsSsimParams {
            scales: 5,
            weights: REFERENCE_WEIGHTS.to_vec(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl MsSsimParams {
    /// Largest usable scale count for images whose shorter side is `extent`
    /// pixels, with the leading reference weights renormalized to sum 1.
    /// Small working resolutions cannot host all five scales.
    pub fn for_resolution(extent: usize) -> Self {
        let mut scales = 1;
        while scales < 5 && extent >= 11 << scales {
            scales += 1;
        }
        let mut weights: Vec<f64> = REFERENCE_WEIGHTS[..scales].to_vec();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        MsSsimParams {
            scales,
            weights,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 1 {
            return Err(Error::invalid("ms_ssim", "need at least one scale"));
        }
        if self.weights.len() != self.scales {
            return Err(Error::invalid(
                "ms_ssim",
                format!(
                    "{} weights for {} scales",
                    self.weights.len(),
                    self.scales
                ),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "ms_ssim",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::invalid("ms_ssim", "window must be odd and >= 3"));
        }
        if !(self.sigma > 0.0) || !(self.range > 0.0) {
            return Err(Error::invalid("ms_ssim", "sigma and range must be positive"));
        }
        Ok(())
    }
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_tensor(t: &Tensor) -> Result<Plane> {
        let gray = to_gray(t)?;
        Ok(Plane {
            h: gray.shape()[0],
            w: gray.shape()[1],
            data: gray.data().iter().map(|&v| v as f64).collect(),
        })
    }

    /// 2x2 mean pooling; odd trailing rows/columns are cropped first.
    fn downsample(&self) -> Plane {
        let (oh, ow) = (self.h / 2, self.w / 2);
        let mut data = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let s = 2 * y * self.w + 2 * x;
                data[y * ow + x] = 0.25
                    * (self.data[s]
                        + self.data[s + 1]
                        + self.data[s + self.w]
                        + self.data[s + self.w + 1]);
            }
        }
        Plane { h: oh, w: ow, data }
    }
}

fn window_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as isize;
    let raw: Vec<f64> = (0..window)
        .map(|i| (-((i as isize - c) as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-window filtering: output is (h-window+1, w-window+1).
fn filter_valid(p: &Plane, kernel: &[f64]) -> Plane {
    let k = kernel.len();
    let (oh, ow) = (p.h - k + 1, p.w - k + 1);
    // horizontal
    let mut mid = vec![0.0; p.h * ow];
    for y in 0..p.h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * p.data[y * p.w + x + i];
            }
            mid[y * ow + x] = acc;
        }
    }
    // vertical
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * mid[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Plane {
        h: oh,
        w: ow,
        data: out,
    }
}

/// Order-independent mean: summing in sorted order makes the reduction a
/// function of the value multiset alone, so spatial rearrangements of the
/// per-window maps (e.g. shifting both inputs) cannot perturb low bits.
fn mean(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Multi-scale structural similarity of two equally shaped images whose
/// values span `[0, range]`. Color inputs are collapsed by channel mean.
pub fn ms_ssim(a: &Tensor, b: &Tensor, params: &MsSsimParams) -> Result<f64> {
    params.validate()?;
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "ms_ssim",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut pa = Plane::from_tensor(a)?;
    let mut pb = Plane::from_tensor(b)?;
    let kernel = window_kernel(params.window, params.sigma);
    let c1 = (params.k1 * params.range).powi(2);
    let c2 = (params.k2 * params.range).powi(2);

    let mut score = 1.0f64;
    for scale in 0..params.scales {
        if pa.h < params.window || pa.w < params.window {
            return Err(Error::invalid(
                "ms_ssim",
                format!(
                    "image too small for {} scales ({}x{} at scale {})",
                    params.scales, pa.h, pa.w, scale
                ),
            ));
        }
        let mu_a = filter_valid(&pa, &kernel);
        let mu_b = filter_valid(&pb, &kernel);
        let sq = |p: &Plane| Plane {
            h: p.h,
            w: p.w,
            data: p.data.iter().map(|&v| v * v).collect(),
        };
        let e_aa = filter_valid(&sq(&pa), &kernel);
        let e_bb = filter_valid(&sq(&pb), &kernel);
        let prod = Plane {
            h: pa.h,
            w: pa.w,
            data: pa
                .data
                .iter()
                .zip(&pb.data)
                .map(|(&x, &y)| x * y)
                .collect(),
        };
        let e_ab = filter_valid(&prod, &kernel);

        let n = mu_a.data.len();
        let mut cs_map = vec![0.0; n];
        let mut l_map = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
            let va = (e_aa.data[i] - ma * ma).max(0.0);
            let vb = (e_bb.data[i] - mb * mb).max(0.0);
            let cov = e_ab.data[i] - ma * mb;
            cs_map[i] = (2.0 * cov + c2) / (va + vb + c2);
            l_map[i] = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        }

        if scale + 1 == params.scales {
            let ssim: Vec<f64> = l_map
                .iter()
                .zip(&cs_map)
                .map(|(&l, &cs)| l * cs)
                .collect();
            score *= mean(&ssim).max(0.0).powf(params.weights[scale]);
        } else {
            score *= mean(&cs_map).max(0.0).powf(params.weights[scale]);
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    if !score.is_finite() {
        return Err(Error::NonFinite { op: "ms_ssim" });
    }
    Ok(score)
}
