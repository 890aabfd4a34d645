//! Matrix kernels and the im2col-based 2-D cross-correlation used by the
//! recorded [`conv2d`](super::Tape::conv2d) operation and by tape-free
//! forward passes (e.g. the fixed feature extractor in the metrics module).

use super::Tensor;
use crate::error::{Error, Result};

/// C(m,n) = A(m,k) * B(k,n), all row-major.
pub fn matmul(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C(m,n) = A(m,k) * B(n,k)^T.
pub fn matmul_abt(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// C(m,n) = A(k,m)^T * B(k,n).
pub fn matmul_atb(a: &[f32], k: usize, m: usize, b: &[f32], n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f32; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Resolved geometry of a conv2d call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dShape {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dShape {
    pub fn resolve(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input must be rank 4, got {:?}", input_shape),
            ));
        }
        if kernel_shape.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be rank 4, got {:?}", kernel_shape),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (batch, c_in, h, w) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (c_out, kc, kh, kw) = (
            kernel_shape[0],
            kernel_shape[1],
            kernel_shape[2],
            kernel_shape[3],
        );
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel in-channels {} != input channels {}", kc, c_in),
            ));
        }
        let oh_num = (h + 2 * padding) as isize - kh as isize;
        let ow_num = (w + 2 * padding) as isize - kw as isize;
        if oh_num < 0 || ow_num < 0 {
            return Err(Error::invalid("conv2d", "non-positive output extent"));
        }
        let oh = oh_num as usize / stride + 1;
        let ow = ow_num as usize / stride + 1;
        Ok(Conv2dShape {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one batch item into a (c_in*kh*kw, oh*ow) patch matrix.
/// Out-of-bounds positions contribute zero.
fn im2col(item: &[f32], s: &Conv2dShape, col: &mut [f32]) {
    debug_assert_eq!(col.len(), s.col_rows() * s.col_cols());
    col.fill(0.0);
    let cols = s.col_cols();
    for ci in 0..s.c_in {
        let plane = &item[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = (ci * s.kh + ky) * s.kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..s.oh {
                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..s.ow {
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        dst[oy * s.ow + ox] = src_row[ix as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one batch item (adjoint of im2col).
fn col2im_acc(col: &[f32], s: &Conv2dShape, item: &mut [f32]) {
    let cols = s.col_cols();
    for ci in 0..s.c_in {
        let plane = &mut item[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = (ci * s.kh + ky) * s.kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..s.oh {
                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..s.ow {
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        dst_row[ix as usize] += src[oy * s.ow + ox];
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (the convolution convention used throughout this
/// crate: kernels are applied unflipped).
pub fn conv2d_raw(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let s = Conv2dShape::resolve(input.shape(), kernel.shape(), stride, padding)?;
    let mut out = vec![0.0f32; s.batch * s.c_out * s.oh * s.ow];
    let mut col = vec![0.0f32; s.col_rows() * s.col_cols()];
    let in_item = s.c_in * s.h * s.w;
    let out_item = s.c_out * s.oh * s.ow;
    for n in 0..s.batch {
        im2col(&input.data()[n * in_item..(n + 1) * in_item], &s, &mut col);
        let prod = matmul(kernel.data(), s.c_out, s.col_rows(), &col, s.col_cols());
        out[n * out_item..(n + 1) * out_item].copy_from_slice(&prod);
    }
    Tensor::new(vec![s.batch, s.c_out, s.oh, s.ow], out)
}

/// Gradients of conv2d w.r.t. input and kernel given the output gradient.
pub fn conv2d_grads(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &[f32],
    s: &Conv2dShape,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let in_item = s.c_in * s.h * s.w;
    let out_item = s.c_out * s.oh * s.ow;
    let mut grad_input = need_input.then(|| vec![0.0f32; input.numel()]);
    let mut grad_kernel = need_kernel.then(|| vec![0.0f32; kernel.numel()]);
    let mut col = vec![0.0f32; s.col_rows() * s.col_cols()];
    for n in 0..s.batch {
        let go = &grad_out[n * out_item..(n + 1) * out_item];
        if let Some(gk) = grad_kernel.as_deref_mut() {
            im2col(&input.data()[n * in_item..(n + 1) * in_item], &s, &mut col);
            // gk(c_out, rows) += go(c_out, cols) * col(rows, cols)^T
            let part = matmul_abt(go, s.c_out, s.col_cols(), &col, s.col_rows());
            for (dst, src) in gk.iter_mut().zip(&part) {
                *dst += src;
            }
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            // gcol(rows, cols) = kernel(c_out, rows)^T * go(c_out, cols)
            let gcol = matmul_atb(kernel.data(), s.c_out, s.col_rows(), go, s.col_cols());
            col2im_acc(&gcol, &s, &mut gi[n * in_item..(n + 1) * in_item]);
        }
    }
    (grad_input, grad_kernel)
}
