//! Sketch extraction: turn a photograph into a binary structural draft.
//!
//! The pipeline runs edge detection (Sobel magnitude), Gaussian low-pass
//! denoising, max-normalized thresholding, and a morphological opening
//! followed by closing to drop speckle and fill thin structures. Output
//! sketches are strictly two-valued planes; the networks remap {0,1} to
//! {-1,+1} at their boundary.

use crate::error::{Error, Result};
use crate::gray::to_gray;
use crate::tensor::Tensor;

/// Tuning knobs of the extraction pipeline.
///
/// Defaults are chosen so that a one-pixel synthetic vessel at 64x64
/// survives all four stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchParams {
    /// Gaussian blur strength in pixels.
    pub sigma: f32,
    /// Gaussian kernel size; odd and at least 3.
    pub ksize: usize,
    /// Threshold on the max-normalized, blurred edge magnitude, in (0,1).
    pub thresh: f32,
    /// Radius in pixels of the disk structuring element.
    pub radius: usize,
}

impl Default for SketchParams {
    fn default() -> Self {
        SketchParams {
            sigma: 1.0,
            ksize: 5,
            thresh: 0.25,
            radius: 1,
        }
    }
}

impl SketchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sketch_params", "sigma must be positive"));
        }
        if self.ksize < 3 || self.ksize % 2 == 0 {
            return Err(Error::invalid(
                "sketch_params",
                format!("kernel size must be odd and >= 3, got {}", self.ksize),
            ));
        }
        if !(self.thresh > 0.0 && self.thresh < 1.0) {
            return Err(Error::invalid(
                "sketch_params",
                "threshold must lie strictly between 0 and 1",
            ));
        }
        if self.radius < 1 {
            return Err(Error::invalid("sketch_params", "radius must be >= 1"));
        }
        Ok(())
    }
}

/// A binary structural draft plus the identity of the image it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchDraft {
    pixels: Tensor,
    source: String,
}

impl SketchDraft {
    /// Wrap an existing two-valued plane.
    pub fn new(pixels: Tensor, source: impl Into<String>) -> Result<Self> {
        if pixels.rank() != 2 {
            return Err(Error::shape(
                "sketch_draft",
                format!("expected rank 2, got {:?}", pixels.shape()),
            ));
        }
        ensure_binary("sketch_draft", &pixels)?;
        Ok(SketchDraft {
            pixels,
            source: source.into(),
        })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

fn ensure_binary(op: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(op, "input must be two-valued {0,1}"));
    }
    Ok(())
}

#[inline]
fn clamped(data: &[f32], h: usize, w: usize, y: isize, x: isize) -> f32 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    data[y * w + x]
}

/// Gradient magnitude sqrt(Gx^2 + Gy^2) from the standard 3x3 Sobel
/// kernels, with edge replication at the border. Multi-channel input is
/// first collapsed by channel mean.
pub fn sobel_magnitude(image: &Tensor) -> Result<Tensor> {
    let gray = to_gray(image)?;
    let (h, w) = (gray.shape()[0], gray.shape()[1]);
    if h == 0 || w == 0 {
        return Err(Error::invalid("sobel", "empty image"));
    }
    let src = gray.data();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let p = |dy: isize, dx: isize| clamped(src, h, w, yi + dy, xi + dx);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    Tensor::new(vec![h, w], out)
}

fn gaussian_kernel(sigma: f32, ksize: usize) -> Vec<f32> {
    let c = (ksize / 2) as isize;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (0..ksize)
        .map(|i| (-((i as isize - c) as f64).powi(2) / s2).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|&v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with a sum-one kernel and edge replication.
pub fn gaussian_lowpass(image: &Tensor, sigma: f32, ksize: usize) -> Result<Tensor> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("gaussian", "sigma must be positive"));
    }
    if ksize < 3 || ksize % 2 == 0 {
        return Err(Error::invalid(
            "gaussian",
            format!("kernel size must be odd and >= 3, got {ksize}"),
        ));
    }
    if image.rank() != 2 {
        return Err(Error::shape(
            "gaussian",
            format!("expected rank 2, got {:?}", image.shape()),
        ));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if h == 0 || w == 0 {
        return Err(Error::invalid("gaussian", "empty image"));
    }
    let kernel = gaussian_kernel(sigma, ksize);
    let c = (ksize / 2) as isize;

    // Horizontal pass, then vertical.
    let src = image.data();
    let mut mid = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * clamped(src, h, w, y as isize, x as isize + i as isize - c);
            }
            mid[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * clamped(&mid, h, w, y as isize + i as isize - c, x as isize);
            }
            out[y * w + x] = acc;
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Threshold against the image maximum: 1 where value/max > thresh.
/// An all-zero image maps to all zeros (no division happens).
pub fn binarize(image: &Tensor, thresh: f32) -> Result<Tensor> {
    if !(thresh > 0.0 && thresh < 1.0) {
        return Err(Error::invalid(
            "binarize",
            "threshold must lie strictly between 0 and 1",
        ));
    }
    if image.rank() != 2 {
        return Err(Error::shape(
            "binarize",
            format!("expected rank 2, got {:?}", image.shape()),
        ));
    }
    let max = image.data().iter().fold(0.0f32, |a, &b| a.max(b));
    if max <= 0.0 {
        return Ok(Tensor::zeros(image.shape().to_vec()));
    }
    let cut = thresh * max;
    let data = image
        .data()
        .iter()
        .map(|&v| if v > cut { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// Offsets of a discrete disk: all (dy, dx) with dy^2 + dx^2 <= r^2.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                offs.push((dy, dx));
            }
        }
    }
    offs
}

/// Erosion treats everything beyond the border as foreground and dilation
/// treats it as background. This adjoint pair makes opening and closing
/// exactly idempotent and keeps opening anti-extensive / closing extensive
/// even for shapes touching the frame.
fn morph(binary: &Tensor, offs: &[(isize, isize)], erode: bool) -> Tensor {
    let (h, w) = (binary.shape()[0], binary.shape()[1]);
    let src = binary.data();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut hit = erode; // erosion: all must be 1; dilation: any is 1
            for &(dy, dx) in offs {
                let (sy, sx) = (y + dy, x + dx);
                let v = if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                    if erode {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    src[sy as usize * w + sx as usize]
                };
                if erode && v == 0.0 {
                    hit = false;
                    break;
                }
                if !erode && v == 1.0 {
                    hit = true;
                    break;
                }
            }
            if hit {
                out[(y as usize) * w + x as usize] = 1.0;
            }
        }
    }
    Tensor::new(vec![h, w], out).expect("same extents")
}

fn check_morph_input(op: &'static str, binary: &Tensor, radius: usize) -> Result<()> {
    if binary.rank() != 2 {
        return Err(Error::shape(
            op,
            format!("expected rank 2, got {:?}", binary.shape()),
        ));
    }
    ensure_binary(op, binary)?;
    if radius < 1 {
        return Err(Error::invalid(op, "radius must be >= 1"));
    }
    Ok(())
}

pub fn erode(binary: &Tensor, radius: usize) -> Result<Tensor> {
    check_morph_input("erode", binary, radius)?;
    Ok(morph(binary, &disk_offsets(radius), true))
}

pub fn dilate(binary: &Tensor, radius: usize) -> Result<Tensor> {
    check_morph_input("dilate", binary, radius)?;
    Ok(morph(binary, &disk_offsets(radius), false))
}

/// Morphological opening: erosion then dilation with the same disk.
pub fn open(binary: &Tensor, radius: usize) -> Result<Tensor> {
    check_morph_input("open", binary, radius)?;
    let offs = disk_offsets(radius);
    Ok(morph(&morph(binary, &offs, true), &offs, false))
}

/// Morphological closing: dilation then erosion with the same disk.
pub fn close(binary: &Tensor, radius: usize) -> Result<Tensor> {
    check_morph_input("close", binary, radius)?;
    let offs = disk_offsets(radius);
    Ok(morph(&morph(binary, &offs, false), &offs, true))
}

/// Opening followed by closing: drops speckle smaller than the disk, then
/// fills gaps narrower than it.
pub fn open_then_close(binary: &Tensor, radius: usize) -> Result<Tensor> {
    check_morph_input("open_then_close", binary, radius)?;
    let offs = disk_offsets(radius);
    let opened = morph(&morph(binary, &offs, true), &offs, false);
    Ok(morph(&morph(&opened, &offs, false), &offs, true))
}

/// Full pipeline: Sobel magnitude, Gaussian low-pass, max-normalized
/// threshold, opening-then-closing.
pub fn extract_sketch(
    image: &Tensor,
    params: &SketchParams,
    source: impl Into<String>,
) -> Result<SketchDraft> {
    params.validate()?;
    let mag = sobel_magnitude(image)?;
    let low = gaussian_lowpass(&mag, params.sigma, params.ksize)?;
    let bin = binarize(&low, params.thresh)?;
    let clean = open_then_close(&bin, params.radius)?;
    SketchDraft::new(clean, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plane(h: usize, w: usize, data: Vec<f32>) -> Tensor {
        Tensor::new(vec![h, w], data).unwrap()
    }

    #[test]
    fn sobel_of_constant_is_zero() {
        let img = Tensor::filled(vec![5, 7], 0.4);
        let mag = sobel_magnitude(&img).unwrap();
        assert!(mag.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_of_vertical_step_peaks_at_four() {
        // Columns 0,0,1,1: the step straddles columns 1 and 2, where the
        // horizontal kernel sums to 4; edge replication keeps the outer
        // columns flat.
        let img = plane(4, 4, vec![0.0, 0.0, 1.0, 1.0].repeat(4));
        let mag = sobel_magnitude(&img).unwrap();
        for y in 0..4 {
            assert_eq!(mag.data()[y * 4], 0.0);
            assert_eq!(mag.data()[y * 4 + 1], 4.0);
            assert_eq!(mag.data()[y * 4 + 2], 4.0);
            assert_eq!(mag.data()[y * 4 + 3], 0.0);
        }
    }

    #[test]
    fn sobel_commutes_with_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Tensor::randn(&mut rng, vec![6, 9], 1.0);
        let mag = sobel_magnitude(&img).unwrap();
        let mut transposed = vec![0.0f32; 54];
        for y in 0..6 {
            for x in 0..9 {
                transposed[x * 6 + y] = img.data()[y * 9 + x];
            }
        }
        let mag_t = sobel_magnitude(&plane(9, 6, transposed)).unwrap();
        for y in 0..6 {
            for x in 0..9 {
                let a = mag.data()[y * 9 + x];
                let b = mag_t.data()[x * 6 + y];
                assert!((a - b).abs() < 1e-5, "({y},{x}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn gaussian_preserves_constants() {
        let img = Tensor::filled(vec![6, 6], 1.3);
        let out = gaussian_lowpass(&img, 1.0, 5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.3).abs() < 1e-6));
    }

    #[test]
    fn gaussian_impulse_response_is_the_kernel() {
        let mut img = Tensor::zeros(vec![9, 9]);
        img.data_mut()[4 * 9 + 4] = 1.0;
        let out = gaussian_lowpass(&img, 1.0, 5).unwrap();
        let k = gaussian_kernel(1.0, 5);
        for dy in 0..5 {
            for dx in 0..5 {
                let want = k[dy] * k[dx];
                let got = out.data()[(2 + dy) * 9 + 2 + dx];
                assert!((got - want).abs() < 1e-7);
            }
        }
        // outside of the kernel footprint everything stays zero
        assert_eq!(out.data()[0], 0.0);
    }

    /// Brute-force dense 2-D convolution with the outer-product kernel and
    /// edge replication.
    fn dense_gaussian(img: &Tensor, sigma: f32, ksize: usize) -> Tensor {
        let (h, w) = (img.shape()[0], img.shape()[1]);
        let k = gaussian_kernel(sigma, ksize);
        let c = (ksize / 2) as isize;
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (i, &ky) in k.iter().enumerate() {
                    for (j, &kx) in k.iter().enumerate() {
                        let v = clamped(
                            img.data(),
                            h,
                            w,
                            y as isize + i as isize - c,
                            x as isize + j as isize - c,
                        );
                        acc += (ky * kx) as f64 * v as f64;
                    }
                }
                out[y * w + x] = acc as f32;
            }
        }
        plane(h, w, out)
    }

    #[test]
    fn gaussian_matches_dense_oracle_and_shrinks_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = Tensor::new(
            vec![12, 10],
            (0..120).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let fast = gaussian_lowpass(&img, 1.3, 7).unwrap();
        let slow = dense_gaussian(&img, 1.3, 7);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let var = |t: &Tensor| {
            let mean: f32 = t.data().iter().sum::<f32>() / t.numel() as f32;
            t.data().iter().map(|v| (v - mean).powi(2)).sum::<f32>() / t.numel() as f32
        };
        assert!(var(&fast) < var(&img));
    }

    #[test]
    fn binarize_examples() {
        let img = plane(1, 2, vec![0.2, 0.8]);
        let out = binarize(&img, 0.5).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0]);
        let zeros = Tensor::zeros(vec![3, 3]);
        assert!(binarize(&zeros, 0.5).unwrap().data().iter().all(|&v| v == 0.0));
        let high = Tensor::filled(vec![2, 2], 0.9);
        assert!(binarize(&high, 0.5).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(binarize(&img, 0.0).is_err());
        assert!(binarize(&img, 1.0).is_err());
    }

    /// Set-based reference morphology with the same border convention.
    fn oracle_morph(binary: &Tensor, radius: usize, erode_mode: bool) -> Tensor {
        let (h, w) = (binary.shape()[0], binary.shape()[1]);
        let offs = disk_offsets(radius);
        let mut out = vec![0.0f32; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let values: Vec<f32> = offs
                    .iter()
                    .map(|&(dy, dx)| {
                        let (sy, sx) = (y + dy, x + dx);
                        if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                            if erode_mode {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            binary.data()[sy as usize * w + sx as usize]
                        }
                    })
                    .collect();
                let v = if erode_mode {
                    values.iter().cloned().fold(1.0f32, f32::min)
                } else {
                    values.iter().cloned().fold(0.0f32, f32::max)
                };
                out[y as usize * w + x as usize] = v;
            }
        }
        plane(h, w, out)
    }

    #[test]
    fn isolated_pixel_is_removed_by_opening() {
        let mut img = Tensor::zeros(vec![5, 5]);
        img.data_mut()[2 * 5 + 2] = 1.0;
        let out = open_then_close(&img, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        // and the oracle agrees stage by stage
        let opened = open(&img, 1).unwrap();
        let oracle_opened = oracle_morph(&oracle_morph(&img, 1, true), 1, false);
        assert_eq!(opened, oracle_opened);
    }

    #[test]
    fn solid_disk_survives_unchanged() {
        let mut img = Tensor::zeros(vec![9, 9]);
        for y in 0..9isize {
            for x in 0..9isize {
                if (y - 4).pow(2) + (x - 4).pow(2) <= 4 {
                    img.data_mut()[(y * 9 + x) as usize] = 1.0;
                }
            }
        }
        let out = open_then_close(&img, 1).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn morphology_rejects_non_binary() {
        let img = plane(2, 2, vec![0.0, 0.5, 1.0, 0.0]);
        assert!(open_then_close(&img, 1).is_err());
        assert!(erode(&img, 1).is_err());
    }

    #[test]
    fn extract_sketch_of_constant_is_empty() {
        let img = Tensor::filled(vec![16, 16], 0.6);
        let draft = extract_sketch(&img, &SketchParams::default(), "flat").unwrap();
        assert!(draft.pixels().data().iter().all(|&v| v == 0.0));
        assert_eq!(draft.source(), "flat");
    }

    #[test]
    fn thin_curve_is_recovered_near_itself() {
        // A one-pixel-wide bright sine arc on a dark background.
        let (h, w) = (64, 64);
        let mut img = Tensor::filled(vec![h, w], 0.05);
        let mut curve = Vec::new();
        for x in 0..w {
            let y = (32.0 + 13.0 * (x as f32 / w as f32 * std::f32::consts::TAU).sin())
                .round() as usize;
            img.data_mut()[y * w + x] = 1.0;
            curve.push((y, x));
        }
        let params = SketchParams::default();
        let draft = extract_sketch(&img, &params, "curve").unwrap();
        let px = draft.pixels();
        let r = params.radius as isize;
        let covered = curve
            .iter()
            .filter(|&&(cy, cx)| {
                (-r..=r).any(|dy| {
                    (-r..=r).any(|dx| {
                        let (sy, sx) = (cy as isize + dy, cx as isize + dx);
                        dy * dy + dx * dx <= r * r
                            && sy >= 0
                            && sy < h as isize
                            && sx >= 0
                            && sx < w as isize
                            && px.data()[sy as usize * w + sx as usize] == 1.0
                    })
                })
            })
            .count();
        assert!(
            covered as f32 >= 0.9 * curve.len() as f32,
            "only {covered}/{} curve pixels covered",
            curve.len()
        );
        // strictly two-valued, and re-binarizing changes nothing
        let again = binarize(px, params.thresh).unwrap();
        assert_eq!(&again, px);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Tensor::new(
            vec![32, 32],
            (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let a = extract_sketch(&img, &SketchParams::default(), "x").unwrap();
        let b = extract_sketch(&img, &SketchParams::default(), "x").unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn opening_and_closing_are_idempotent(bits in proptest::collection::vec(0u8..2, 64)) {
            let img = plane(8, 8, bits.iter().map(|&b| b as f32).collect());
            let opened = open(&img, 1).unwrap();
            prop_assert_eq!(&open(&opened, 1).unwrap(), &opened);
            let closed = close(&img, 1).unwrap();
            prop_assert_eq!(&close(&closed, 1).unwrap(), &closed);
            // anti-extensive / extensive
            for ((&o, &i), &c) in opened.data().iter().zip(img.data()).zip(closed.data()) {
                prop_assert!(o <= i);
                prop_assert!(c >= i);
            }
        }

        #[test]
        fn morphology_matches_set_oracle(bits in proptest::collection::vec(0u8..2, 49)) {
            let img = plane(7, 7, bits.iter().map(|&b| b as f32).collect());
            prop_assert_eq!(erode(&img, 1).unwrap(), oracle_morph(&img, 1, true));
            prop_assert_eq!(dilate(&img, 1).unwrap(), oracle_morph(&img, 1, false));
            prop_assert_eq!(erode(&img, 2).unwrap(), oracle_morph(&img, 2, true));
            prop_assert_eq!(dilate(&img, 2).unwrap(), oracle_morph(&img, 2, false));
        }
    }
}
