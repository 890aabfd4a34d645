//! Sliced Wasserstein distance between two image sets.
//!
//! Protocol: build a Laplacian pyramid per image down to a minimum
//! resolution, cut a fixed number of patches per image at every level,
//! normalize the patch descriptors per channel within each set, project
//! both descriptor clouds onto shared random unit directions, and average
//! the absolute differences of the sorted projections.
//!
//! Determinism is load-bearing here: patch positions depend only on
//! (seed, level), not on the images, and every reduction across a set is
//! performed in sorted order. Two consequences are tested as exact
//! equalities: `swd(X, X) == 0`, and invariance under reordering either
//! set.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwdParams {
    /// Coarsest pyramid resolution kept.
    pub min_res: usize,
    /// Patch side length.
    pub patch: usize,
    /// Patches cut from each image at each level.
    pub patches_per_image: usize,
    /// Number of random projection directions.
    pub projections: usize,
    pub seed: u64,
}

impl Default for SwdParams {
    fn default() -> Self {
        SwdParams {
            min_res: 16,
            patch: 7,
            patches_per_image: 128,
            projections: 512,
            seed: 0,
        }
    }
}

impl SwdParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_res == 0
            || self.patch == 0
            || self.patches_per_image == 0
            || self.projections == 0
        {
            return Err(Error::invalid("swd", "all parameters must be positive"));
        }
        if self.patch > self.min_res {
            return Err(Error::invalid(
                "swd",
                format!(
                    "patch {} does not fit the smallest pyramid level {}",
                    self.patch, self.min_res
                ),
            ));
        }
        Ok(())
    }
}

/// Per-level distances (labelled by level height) and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SwdResult {
    pub levels: Vec<(usize, f64)>,
    pub mean: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const BINOMIAL5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur5(src: &[f32], h: usize, w: usize) -> Vec<f32> {
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut mid = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in BINOMIAL5.iter().enumerate() {
                acc += k * src[y * w + clamp(x as isize + i as isize - 2, w)];
            }
            mid[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in BINOMIAL5.iter().enumerate() {
                acc += k * mid[clamp(y as isize + i as isize - 2, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn pyr_down(src: &[f32], h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let blurred = blur5(src, h, w);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = blurred[2 * y * w + 2 * x];
        }
    }
    (out, oh, ow)
}

fn pyr_up(src: &[f32], h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut stuffed = vec![0.0f32; oh * ow];
    for y in 0..h {
        for x in 0..w {
            stuffed[2 * y * ow + 2 * x] = src[y * w + x];
        }
    }
    // zero stuffing leaves a quarter of the energy; the blur spreads it,
    // the factor of 4 restores it
    blur5(&stuffed, oh, ow)
        .into_iter()
        .map(|v| 4.0 * v)
        .collect()
}

/// Standardize an image to [c, h, w].
fn as_chw(img: &Tensor) -> Result<(usize, usize, usize, Vec<f32>)> {
    match img.rank() {
        2 => Ok((1, img.shape()[0], img.shape()[1], img.data().to_vec())),
        3 => Ok((
            img.shape()[0],
            img.shape()[1],
            img.shape()[2],
            img.data().to_vec(),
        )),
        _ => Err(Error::shape(
            "swd",
            format!("expected rank 2 or 3 images, got {:?}", img.shape()),
        )),
    }
}

/// Laplacian pyramid of one image, finest first; the last entry is the
/// remaining Gaussian level.
fn laplacian_levels(
    chans: usize,
    h: usize,
    w: usize,
    data: &[f32],
    min_res: usize,
) -> Vec<(usize, usize, Vec<f32>)> {
    let mut gaussians: Vec<(usize, usize, Vec<f32>)> = vec![(h, w, data.to_vec())];
    loop {
        let (gh, gw, _) = gaussians[gaussians.len() - 1];
        if gh.min(gw) / 2 < min_res {
            break;
        }
        let (gh, gw, g) = {
            let (gh, gw, ref g) = gaussians[gaussians.len() - 1];
            (gh, gw, g.clone())
        };
        let mut planes = Vec::with_capacity(chans * (gh / 2) * (gw / 2));
        for c in 0..chans {
            let (down, _, _) = pyr_down(&g[c * gh * gw..(c + 1) * gh * gw], gh, gw);
            planes.extend(down);
        }
        gaussians.push((gh / 2, gw / 2, planes));
    }
    let mut levels = Vec::with_capacity(gaussians.len());
    for i in 0..gaussians.len() {
        if i + 1 == gaussians.len() {
            levels.push(gaussians[i].clone());
        } else {
            let (gh, gw, ref g) = gaussians[i];
            let (nh, nw, ref next) = gaussians[i + 1];
            let mut lap = Vec::with_capacity(chans * gh * gw);
            for c in 0..chans {
                let up = pyr_up(&next[c * nh * nw..(c + 1) * nh * nw], nh, nw);
                lap.extend(
                    g[c * gh * gw..(c + 1) * gh * gw]
                        .iter()
                        .zip(&up)
                        .map(|(&a, &b)| a - b),
                );
            }
            levels.push((gh, gw, lap));
        }
    }
    levels
}

fn sorted_sum(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Patch descriptors of one set at one level: `count * dim` values, where
/// `dim = chans * patch^2`. Every image is sampled at the same positions.
fn descriptors(
    images: &[(usize, usize, Vec<f32>)],
    chans: usize,
    patch: usize,
    positions: &[(usize, usize)],
) -> Vec<f32> {
    let dim = chans * patch * patch;
    let mut out = Vec::with_capacity(images.len() * positions.len() * dim);
    for (h, w, data) in images {
        for &(py, px) in positions {
            for c in 0..chans {
                let plane = &data[c * h * w..(c + 1) * h * w];
                for dy in 0..patch {
                    let row = (py + dy) * w + px;
                    out.extend_from_slice(&plane[row..row + patch]);
                }
            }
        }
    }
    out
}

/// In-place per-channel standardization of a descriptor set. Statistics
/// combine per-image partial sums in sorted order, so the result depends
/// only on the multiset of images.
fn normalize_per_channel(desc: &mut [f32], n_images: usize, chans: usize, patch: usize) {
    let dim = chans * patch * patch;
    let per_image = desc.len() / n_images.max(1);
    for c in 0..chans {
        let mut sums = Vec::with_capacity(n_images);
        let mut sumsqs = Vec::with_capacity(n_images);
        let mut count = 0usize;
        for img in 0..n_images {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            let block = &desc[img * per_image..(img + 1) * per_image];
            for patch_desc in block.chunks(dim) {
                for &v in &patch_desc[c * patch * patch..(c + 1) * patch * patch] {
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                    count += 1;
                }
            }
            sums.push(s);
            sumsqs.push(s2);
        }
        let mean = sorted_sum(&mut sums) / count as f64;
        let var = (sorted_sum(&mut sumsqs) / count as f64 - mean * mean).max(0.0);
        let std = var.sqrt().max(1e-12);
        for img in 0..n_images {
            let block = &mut desc[img * per_image..(img + 1) * per_image];
            for patch_desc in block.chunks_mut(dim) {
                for v in &mut patch_desc[c * patch * patch..(c + 1) * patch * patch] {
                    *v = ((*v as f64 - mean) / std) as f32;
                }
            }
        }
    }
}

/// Average over directions of the mean absolute difference between the
/// sorted projections of two equally sized descriptor sets. `dirs` holds
/// unit direction vectors row-major, `n_dirs x dim`.
pub fn sliced_distance(desc_a: &[f32], desc_b: &[f32], dim: usize, dirs: &[f32]) -> Result<f64> {
    if dim == 0 || desc_a.len() % dim != 0 || desc_b.len() % dim != 0 {
        return Err(Error::shape("swd", "descriptor length not a multiple of dim"));
    }
    if desc_a.len() != desc_b.len() || desc_a.is_empty() {
        return Err(Error::invalid(
            "swd",
            "descriptor sets must be non-empty and equal in size",
        ));
    }
    if dirs.is_empty() || dirs.len() % dim != 0 {
        return Err(Error::shape("swd", "direction matrix shape mismatch"));
    }
    let n = desc_a.len() / dim;
    let n_dirs = dirs.len() / dim;
    let mut total = 0.0f64;
    let mut pa = vec![0.0f64; n];
    let mut pb = vec![0.0f64; n];
    for d in 0..n_dirs {
        let dir = &dirs[d * dim..(d + 1) * dim];
        for (slot, desc) in [(&mut pa, desc_a), (&mut pb, desc_b)] {
            for (i, patch) in desc.chunks(dim).enumerate() {
                let mut acc = 0.0f64;
                for (&x, &w) in patch.iter().zip(dir) {
                    acc += x as f64 * w as f64;
                }
                slot[i] = acc;
            }
        }
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        let mut diff = 0.0f64;
        for (a, b) in pa.iter().zip(&pb) {
            diff += (a - b).abs();
        }
        total += diff / n as f64;
    }
    Ok(total / n_dirs as f64)
}

/// Sliced Wasserstein distance between two equally sized image sets.
pub fn swd(set_a: &[Tensor], set_b: &[Tensor], params: &SwdParams) -> Result<SwdResult> {
    params.validate()?;
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::invalid("swd", "empty image set"));
    }
    if set_a.len() != set_b.len() {
        return Err(Error::invalid(
            "swd",
            format!(
                "sets must be equally sized (got {} vs {}); subsample first",
                set_a.len(),
                set_b.len()
            ),
        ));
    }
    let (chans, h, w, _) = as_chw(&set_a[0])?;
    if h.min(w) < params.min_res {
        return Err(Error::invalid(
            "swd",
            format!("images {h}x{w} are smaller than the coarsest level"),
        ));
    }
    let mut pyr_a: Vec<Vec<(usize, usize, Vec<f32>)>> = Vec::new();
    let mut pyr_b: Vec<Vec<(usize, usize, Vec<f32>)>> = Vec::new();
    for (set, pyr) in [(set_a, &mut pyr_a), (set_b, &mut pyr_b)] {
        for img in set {
            let (c2, h2, w2, data) = as_chw(img)?;
            if (c2, h2, w2) != (chans, h, w) {
                return Err(Error::shape(
                    "swd",
                    "all images in both sets must share one shape",
                ));
            }
            pyr.push(laplacian_levels(chans, h, w, &data, params.min_res));
        }
    }
    let n_levels = pyr_a[0].len();
    let dim = chans * params.patch * params.patch;
    let mut levels = Vec::with_capacity(n_levels);
    for level in 0..n_levels {
        let (lh, lw, _) = pyr_a[0][level];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, level as u64, 1));
        let positions: Vec<(usize, usize)> = (0..params.patches_per_image)
            .map(|_| {
                (
                    rng.gen_range(0..=lh - params.patch),
                    rng.gen_range(0..=lw - params.patch),
                )
            })
            .collect();
        let imgs_a: Vec<_> = pyr_a.iter().map(|p| p[level].clone()).collect();
        let imgs_b: Vec<_> = pyr_b.iter().map(|p| p[level].clone()).collect();
        let mut desc_a = descriptors(&imgs_a, chans, params.patch, &positions);
        let mut desc_b = descriptors(&imgs_b, chans, params.patch, &positions);
        normalize_per_channel(&mut desc_a, imgs_a.len(), chans, params.patch);
        normalize_per_channel(&mut desc_b, imgs_b.len(), chans, params.patch);

        let mut dir_rng = ChaCha8Rng::seed_from_u64(mix(params.seed, level as u64, 2));
        let mut dirs = Tensor::randn(&mut dir_rng, vec![params.projections, dim], 1.0)
            .into_data();
        for row in dirs.chunks_mut(dim) {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        let value = sliced_distance(&desc_a, &desc_b, dim, &dirs)?;
        levels.push((lh, value));
    }
    let mean = levels.iter().map(|&(_, v)| v).sum::<f64>() / levels.len() as f64;
    Ok(SwdResult { levels, mean })
}
