//! Plane-level image helpers: grayscale conversion and bilinear resizing.
//!
//! Images are plain tensors: rank 2 `[h, w]` for a single plane, rank 3
//! `[c, h, w]` for multi-channel. Resampling uses half-pixel-centre
//! coordinates, so resizing to the same extents is an exact identity.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Collapse a `[c, h, w]` image to one plane by unweighted channel mean.
/// Rank-2 input passes through unchanged.
pub fn to_gray(image: &Tensor) -> Result<Tensor> {
    match image.rank() {
        2 => Ok(image.clone()),
        3 => {
            let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
            if c == 0 || h == 0 || w == 0 {
                return Err(Error::invalid("to_gray", "empty image"));
            }
            let mut out = vec![0.0f32; h * w];
            for ci in 0..c {
                let plane = &image.data()[ci * h * w..(ci + 1) * h * w];
                for (o, &v) in out.iter_mut().zip(plane) {
                    *o += v;
                }
            }
            let inv = 1.0 / c as f32;
            for o in &mut out {
                *o *= inv;
            }
            Tensor::new(vec![h, w], out)
        }
        _ => Err(Error::shape(
            "to_gray",
            format!("expected rank 2 or 3, got {:?}", image.shape()),
        )),
    }
}

/// Clamped pixel fetch (edge replication).
#[inline]
fn at(data: &[f32], h: usize, w: usize, y: isize, x: isize) -> f32 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    data[y * w + x]
}

/// Bilinear resize of one `[h, w]` plane using half-pixel centres.
pub fn resize_plane(plane: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    if plane.rank() != 2 {
        return Err(Error::shape(
            "resize",
            format!("expected rank 2, got {:?}", plane.shape()),
        ));
    }
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::invalid("resize", "zero extent"));
    }
    let src = plane.data();
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut out = vec![0.0f32; oh * ow];
    for dy in 0..oh {
        let fy = (dy as f32 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let wy = fy - y0;
        for dx in 0..ow {
            let fx = (dx as f32 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let wx = fx - x0;
            let (yi, xi) = (y0 as isize, x0 as isize);
            let tl = at(src, h, w, yi, xi);
            let tr = at(src, h, w, yi, xi + 1);
            let bl = at(src, h, w, yi + 1, xi);
            let br = at(src, h, w, yi + 1, xi + 1);
            let top = tl + wx * (tr - tl);
            let bot = bl + wx * (br - bl);
            out[dy * ow + dx] = top + wy * (bot - top);
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Bilinear resize of a `[c, h, w]` image, channel by channel.
pub fn resize_image(image: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    if image.rank() != 3 {
        return Err(Error::shape(
            "resize",
            format!("expected rank 3, got {:?}", image.shape()),
        ));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = Tensor::new(
            vec![h, w],
            image.data()[ci * h * w..(ci + 1) * h * w].to_vec(),
        )?;
        out.extend_from_slice(resize_plane(&plane, oh, ow)?.data());
    }
    Tensor::new(vec![c, oh, ow], out)
}
