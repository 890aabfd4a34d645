//! Corpus ingestion, manifests, and the procedural toy corpus.
//!
//! Images are PNG on disk and [`Tensor`]s in memory: color as (3,H,W) in
//! [-1,1], binary sketches and masks as (H,W) in {0,1}. A dataset is a
//! directory plus a `manifest.tsv` of `image<TAB>sketch<TAB>mask` lines
//! (empty fields allowed); without a manifest, every `*.png` in
//! lexicographic order is an image-only entry.

use std::fs::{self, File};
use std::io::{BufWriter, ErrorKind};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gray::{resize_image, to_gray};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    /// File names relative to the dataset root.
    pub image: String,
    pub sketch: Option<String>,
    pub mask: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub root: PathBuf,
    pub resolution: usize,
    pub channels: usize,
    pub shuffle_seed: u64,
    pub entries: Vec<DatasetEntry>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn path_of(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Decode entry `i`'s image, resized to the working resolution and
    /// remapped to [-1,1]; (3,R,R) for color mode, (R,R) for grayscale.
    pub fn load_image(&self, i: usize) -> Result<Tensor> {
        let path = self.path_of(&self.entries[i].image);
        let unit = load_color_png(&path, self.resolution)?;
        let unit = if self.channels == 1 { to_gray(&unit)? } else { unit };
        Ok(signed_from_unit(&unit))
    }

    /// Decode entry `i`'s binary sketch at its native resolution, {0,1}.
    pub fn load_sketch(&self, i: usize) -> Result<Option<Tensor>> {
        match &self.entries[i].sketch {
            Some(name) => Ok(Some(load_binary_png(&self.path_of(name))?)),
            None => Ok(None),
        }
    }

    /// Decode entry `i`'s binary mask at its native resolution, {0,1}.
    pub fn load_mask(&self, i: usize) -> Result<Option<Tensor>> {
        match &self.entries[i].mask {
            Some(name) => Ok(Some(load_binary_png(&self.path_of(name))?)),
            None => Ok(None),
        }
    }

    pub fn load_all_images(&self) -> Result<Vec<Tensor>> {
        (0..self.len()).map(|i| self.load_image(i)).collect()
    }

    /// Deterministic per-epoch iteration order.
    pub fn shuffled(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        order
    }

    /// Seeded split into (kept, held-out) datasets; `hold_out` of the
    /// entries go to the second set.
    pub fn split(&self, hold_out: usize, seed: u64) -> Result<(ImageDataset, ImageDataset)> {
        if hold_out >= self.len() {
            return Err(Error::invalid(
                "split",
                format!("cannot hold out {} of {} entries", hold_out, self.len()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..self.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let pick = |idx: &[usize]| ImageDataset {
            root: self.root.clone(),
            resolution: self.resolution,
            channels: self.channels,
            shuffle_seed: self.shuffle_seed,
            entries: idx.iter().map(|&i| self.entries[i].clone()).collect(),
        };
        let (held, kept) = order.split_at(hold_out);
        let mut held = held.to_vec();
        let mut kept = kept.to_vec();
        held.sort_unstable();
        kept.sort_unstable();
        Ok((pick(&kept), pick(&held)))
    }
}

/// Map [0,1] values to [-1,1].
pub fn signed_from_unit(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|v| 2.0 * v - 1.0).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same length")
}

/// Map [-1,1] values to [0,1].
pub fn unit_from_signed(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|v| (0.5 * (v + 1.0)).clamp(0.0, 1.0)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same length")
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Decode a PNG to (3,R,R) in [0,1], bilinear-resized to `resolution`
/// (0 keeps the native size).
pub fn load_color_png(path: &Path, resolution: usize) -> Result<Tensor> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + at] = px.0[c] as f32 / 255.0;
        }
    }
    let t = Tensor::new([3, h, w], data)?;
    if resolution == 0 || (h == resolution && w == resolution) {
        Ok(t)
    } else {
        resize_image(&t, resolution, resolution)
    }
}

/// Decode a PNG as a {0,1} plane: any pixel brighter than mid-gray is 1.
pub fn load_binary_png(path: &Path) -> Result<Tensor> {
    let gray = decode(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.pixels().map(|p| f32::from(p.0[0] > 127)).collect();
    Tensor::new([h, w], data)
}

/// Write a (3,H,W) tensor in [-1,1] as an 8-bit RGB PNG.
pub fn save_color_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if t.rank() != 3 || s[0] != 3 {
        return Err(Error::shape("save_color_png", format!("expected (3,H,W), got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut bytes = vec![0u8; 3 * plane];
    for at in 0..plane {
        for c in 0..3 {
            let unit = 0.5 * (t.data()[c * plane + at] + 1.0);
            bytes[3 * at + c] = (unit * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    write_png(path, w, h, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// Write an (H,W) tensor in {0,1} as a 1-bit grayscale PNG.
pub fn save_binary_png(path: &Path, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::shape("save_binary_png", format!("expected (H,W), got {:?}", t.shape())));
    }
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("save_binary_png", "pixels must be 0 or 1"));
    }
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let row_bytes = w.div_ceil(8);
    let mut bytes = vec![0u8; h * row_bytes];
    for y in 0..h {
        for x in 0..w {
            if t.data()[y * w + x] == 1.0 {
                bytes[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write_png(path, w, h, png::ColorType::Grayscale, png::BitDepth::One, &bytes)
}

fn write_png(
    path: &Path,
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let io_err = |e: png::EncodingError| std::io::Error::new(ErrorKind::Other, e);
    let mut writer = enc.write_header().map_err(io_err)?;
    writer.write_image_data(bytes).map_err(io_err)?;
    writer.finish().map_err(io_err)?;
    Ok(())
}

pub fn write_manifest(dir: &Path, entries: &[DatasetEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            e.image,
            e.sketch.as_deref().unwrap_or(""),
            e.mask.as_deref().unwrap_or("")
        ));
    }
    fs::write(dir.join(MANIFEST_NAME), out)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<DatasetEntry>> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let image = fields.next().unwrap_or("").to_string();
        if image.is_empty() {
            return Err(Error::invalid(
                "manifest",
                format!("line {}: empty image field", lineno + 1),
            ));
        }
        let opt = |s: Option<&str>| s.filter(|s| !s.is_empty()).map(str::to_string);
        entries.push(DatasetEntry {
            image,
            sketch: opt(fields.next()),
            mask: opt(fields.next()),
        });
    }
    Ok(entries)
}

/// Open a dataset directory. Every entry must decode unless
/// `skip_undecodable` is set, in which case bad files are dropped with
/// their paths collected into the dataset silently skipped.
pub fn load_dataset(
    dir: &Path,
    resolution: usize,
    channels: usize,
    skip_undecodable: bool,
) -> Result<ImageDataset> {
    if channels != 1 && channels != 3 {
        return Err(Error::invalid("load_dataset", "channels must be 1 or 3"));
    }
    let entries = if dir.join(MANIFEST_NAME).is_file() {
        read_manifest(dir)?
    } else {
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
            .collect();
        names.sort_unstable();
        names
            .into_iter()
            .map(|image| DatasetEntry { image, sketch: None, mask: None })
            .collect()
    };
    let dataset = ImageDataset {
        root: dir.to_path_buf(),
        resolution,
        channels,
        shuffle_seed: 0,
        entries,
    };
    // Probe every image now so failures carry the path.
    let mut kept = Vec::with_capacity(dataset.entries.len());
    for (i, entry) in dataset.entries.iter().enumerate() {
        match dataset.load_image(i) {
            Ok(_) => kept.push(entry.clone()),
            Err(e) if skip_undecodable => {
                let _ = e; // dropped by request
            }
            Err(e) => return Err(e),
        }
    }
    let dataset = ImageDataset { entries: kept, ..dataset };
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    Ok(dataset)
}

/// Halve a {0,1} plane: a 2x2 block becomes 1 when strictly more than
/// half its pixels are set — the same rule as averaging in {-1,+1} and
/// thresholding at zero, with ties breaking toward background.
pub fn downsample_binary(sketch: &Tensor) -> Result<Tensor> {
    let s = sketch.shape();
    if sketch.rank() != 2 || s[0] % 2 != 0 || s[1] % 2 != 0 {
        return Err(Error::shape(
            "downsample_binary",
            format!("expected even (H,W), got {s:?}"),
        ));
    }
    let (h, w) = (s[0] / 2, s[1] / 2);
    let src = sketch.data();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let sum = src[(2 * y) * s[1] + 2 * x]
                + src[(2 * y) * s[1] + 2 * x + 1]
                + src[(2 * y + 1) * s[1] + 2 * x]
                + src[(2 * y + 1) * s[1] + 2 * x + 1];
            out[y * w + x] = f32::from(sum > 2.0);
        }
    }
    Tensor::new([h, w], out)
}

/// Cubic Bézier point.
fn bezier(p: &[(f32, f32); 4], t: f32) -> (f32, f32) {
    let u = 1.0 - t;
    let (b0, b1, b2, b3) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    (
        b0 * p[0].0 + b1 * p[1].0 + b2 * p[2].0 + b3 * p[3].0,
        b0 * p[0].1 + b1 * p[1].1 + b2 * p[2].1 + b3 * p[3].1,
    )
}

fn stamp_disk(mask: &mut [f32], res: usize, cx: f32, cy: f32, r: f32) {
    let (x0, x1) = (((cx - r).floor().max(0.0)) as usize, ((cx + r).ceil() as usize).min(res - 1));
    let (y0, y1) = (((cy - r).floor().max(0.0)) as usize, ((cy + r).ceil() as usize).min(res - 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            if dx * dx + dy * dy <= r * r {
                mask[y * res + x] = 1.0;
            }
        }
    }
}

/// Procedurally draw `n` vessel-like images: dark Bézier curves over a
/// smooth radial color gradient, with ground-truth curve masks. Writes
/// `img_NNNN.png`, `img_NNNN_mask.png`, and a manifest; byte-identical
/// for identical arguments.
pub fn make_toy_corpus(n: usize, resolution: usize, seed: u64, out: &Path) -> Result<ImageDataset> {
    if n == 0 {
        return Err(Error::invalid("make_toy_corpus", "n must be positive"));
    }
    if resolution < 8 {
        return Err(Error::invalid("make_toy_corpus", "resolution must be at least 8"));
    }
    fs::create_dir_all(out)?;
    let res = resolution;
    let plane = res * res;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);

        // Smooth radial background between two mid-to-light colors.
        let c0: [f32; 3] = [0.45 + 0.5 * rng.gen::<f32>(), 0.45 + 0.5 * rng.gen::<f32>(), 0.45 + 0.5 * rng.gen::<f32>()];
        let c1: [f32; 3] = [0.45 + 0.5 * rng.gen::<f32>(), 0.45 + 0.5 * rng.gen::<f32>(), 0.45 + 0.5 * rng.gen::<f32>()];
        let (gx, gy) = (rng.gen::<f32>() * res as f32, rng.gen::<f32>() * res as f32);
        let norm = res as f32 * 0.9;
        let mut image = vec![0.0f32; 3 * plane];
        for y in 0..res {
            for x in 0..res {
                let d = ((x as f32 - gx).powi(2) + (y as f32 - gy).powi(2)).sqrt() / norm;
                let t = d.min(1.0);
                for c in 0..3 {
                    image[c * plane + y * res + x] = c0[c] + (c1[c] - c0[c]) * t;
                }
            }
        }

        // Dark vessel curves, recorded in the mask as drawn.
        let mut mask = vec![0.0f32; plane];
        let curves = rng.gen_range(2..=5);
        for _ in 0..curves {
            let pts: [(f32, f32); 4] = std::array::from_fn(|_| {
                (rng.gen::<f32>() * res as f32, rng.gen::<f32>() * res as f32)
            });
            let radius = 0.8 + rng.gen::<f32>() * (res as f32 / 40.0);
            let shade: [f32; 3] = [
                0.05 + 0.20 * rng.gen::<f32>(),
                0.05 + 0.15 * rng.gen::<f32>(),
                0.05 + 0.15 * rng.gen::<f32>(),
            ];
            let steps = 6 * res;
            for s in 0..=steps {
                let (px, py) = bezier(&pts, s as f32 / steps as f32);
                if px < -radius || py < -radius || px > res as f32 + radius || py > res as f32 + radius {
                    continue;
                }
                stamp_disk(&mut mask, res, px, py, radius);
            }
            for at in 0..plane {
                if mask[at] == 1.0 {
                    for c in 0..3 {
                        let v = &mut image[c * plane + at];
                        *v = v.min(shade[c]);
                    }
                }
            }
        }

        let image_name = format!("img_{i:04}.png");
        let mask_name = format!("img_{i:04}_mask.png");
        let unit = Tensor::new([3, res, res], image)?;
        save_color_png(&out.join(&image_name), &signed_from_unit(&unit))?;
        save_binary_png(&out.join(&mask_name), &Tensor::new([res, res], mask)?)?;
        entries.push(DatasetEntry {
            image: image_name,
            sketch: None,
            mask: Some(mask_name),
        });
    }
    write_manifest(out, &entries)?;
    Ok(ImageDataset {
        root: out.to_path_buf(),
        resolution,
        channels: 3,
        shuffle_seed: seed,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{extract_sketch, SketchParams};

    fn checkerboard(res: usize) -> Tensor {
        let data = (0..3 * res * res)
            .map(|i| {
                let at = i % (res * res);
                let (y, x) = (at / res, at % res);
                if (x / 4 + y / 4) % 2 == 0 { 0.6 } else { -0.4 }
            })
            .collect();
        Tensor::new([3, res, res], data).unwrap()
    }

    #[test]
    fn color_png_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let t = checkerboard(16);
        save_color_png(&path, &t).unwrap();
        let back = signed_from_unit(&load_color_png(&path, 0).unwrap());
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn binary_png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.png");
        // Width 13 exercises partial final bytes in the bit packing.
        let data: Vec<f32> = (0..9 * 13).map(|i| f32::from(i % 3 == 0)).collect();
        let t = Tensor::new([9, 13], data).unwrap();
        save_binary_png(&path, &t).unwrap();
        assert_eq!(load_binary_png(&path).unwrap(), t);
        let bad = Tensor::filled([4, 4], 0.5);
        assert!(save_binary_png(&path, &bad).is_err());
    }

    #[test]
    fn load_dataset_resizes_and_remaps() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.png", "a.png", "b.png"] {
            save_color_png(&dir.path().join(name), &checkerboard(32)).unwrap();
        }
        let ds = load_dataset(dir.path(), 16, 3, false).unwrap();
        assert_eq!(ds.len(), 3);
        let names: Vec<&str> = ds.entries.iter().map(|e| e.image.as_str()).collect();
        assert_eq!(names, ["a.png", "b.png", "c.png"]); // lexicographic
        let img = ds.load_image(0).unwrap();
        assert_eq!(img.shape(), &[3, 16, 16]);
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let again = load_dataset(dir.path(), 16, 3, false).unwrap();
        assert_eq!(again.entries, ds.entries);
    }

    #[test]
    fn load_dataset_rejects_empty_and_reports_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset(dir.path(), 16, 3, false) {
            Err(Error::EmptyDataset(p)) => assert_eq!(p, dir.path()),
            other => panic!("expected EmptyDataset, got {other:?}"),
        }
        fs::write(dir.path().join("junk.png"), b"not a png").unwrap();
        match load_dataset(dir.path(), 16, 3, false) {
            Err(Error::ImageDecode { path, .. }) => {
                assert!(path.ends_with("junk.png"))
            }
            other => panic!("expected ImageDecode, got {other:?}"),
        }
        save_color_png(&dir.path().join("ok.png"), &checkerboard(16)).unwrap();
        let ds = load_dataset(dir.path(), 16, 3, true).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.entries[0].image, "ok.png");
    }

    #[test]
    fn manifest_round_trips_with_empty_fields() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            DatasetEntry { image: "x.png".into(), sketch: None, mask: Some("m.png".into()) },
            DatasetEntry { image: "y.png".into(), sketch: Some("s.png".into()), mask: None },
        ];
        write_manifest(dir.path(), &entries).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
    }

    #[test]
    fn downsample_binary_uses_majority_occupancy() {
        #[rustfmt::skip]
        let t = Tensor::new([4, 4], vec![
            1.0, 1.0, 1.0, 0.0,
            1.0, 1.0, 1.0, 0.0, // left block full, right block half
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 1.0, // both lower blocks one quarter
        ]).unwrap();
        let d = downsample_binary(&t).unwrap();
        assert_eq!(d.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(downsample_binary(&Tensor::zeros([3, 4])).is_err());
    }

    #[test]
    fn toy_corpus_is_byte_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ds = make_toy_corpus(4, 32, 7, a.path()).unwrap();
        make_toy_corpus(4, 32, 7, b.path()).unwrap();
        assert_eq!(ds.len(), 4);
        let mut names: Vec<String> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 9); // 4 images + 4 masks + manifest
        for name in &names {
            let bytes_a = fs::read(a.path().join(name)).unwrap();
            let bytes_b = fs::read(b.path().join(name)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{name} differs between runs");
        }
    }

    #[test]
    fn toy_masks_are_binary_and_nonempty() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_toy_corpus(3, 32, 11, dir.path()).unwrap();
        for i in 0..ds.len() {
            let mask = ds.load_mask(i).unwrap().expect("toy entries carry masks");
            assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(mask.data().iter().any(|&v| v == 1.0));
        }
    }

    #[test]
    fn extracted_sketch_tracks_the_toy_mask() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_toy_corpus(3, 64, 5, dir.path()).unwrap();
        let r = 2i64;
        for i in 0..ds.len() {
            let image = ds.load_image(i).unwrap();
            let mask = ds.load_mask(i).unwrap().unwrap();
            let sketch = extract_sketch(&image, &SketchParams::default(), "toy").unwrap();
            let sk = sketch.pixels().data();
            let res = 64i64;
            let (mut hit, mut total) = (0usize, 0usize);
            for y in 0..res {
                for x in 0..res {
                    if mask.data()[(y * res + x) as usize] != 1.0 {
                        continue;
                    }
                    total += 1;
                    let covered = (-r..=r).any(|dy| {
                        (-r..=r).any(|dx| {
                            let (ny, nx) = (y + dy, x + dx);
                            (0..res).contains(&ny)
                                && (0..res).contains(&nx)
                                && sk[(ny * res + nx) as usize] == 1.0
                        })
                    });
                    hit += usize::from(covered);
                }
            }
            let frac = hit as f64 / total as f64;
            assert!(frac >= 0.8, "image {i}: only {frac:.3} of mask pixels near sketch");
        }
    }
}
