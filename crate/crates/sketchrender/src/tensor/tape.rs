//! Recorded forward pass with reverse-mode gradients.
//!
//! A [`Tape`] owns every intermediate value of one forward computation.
//! Operations append nodes and return lightweight [`Var`] handles; calling
//! [`Tape::backward`] on a one-element loss fills in gradients for every
//! node that (transitively) depends on a leaf created with
//! [`Tape::leaf`]. Values entered with [`Tape::constant`] never receive
//! gradient storage, which is how a GAN half-step freezes the opposite
//! network: bind its parameters as constants and the whole frozen subgraph
//! is skipped during the sweep.
//!
//! Every operation validates shapes up front and checks its output for
//! NaN/Inf before recording it; a non-finite value is reported as an error
//! instead of propagating silently.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::linalg::{self, conv2d_grads, Conv2dShape};
use super::Tensor;
use crate::error::{Error, Result};

/// Sigmoid outputs are pinned to this open interval so that the log terms
/// of a cross-entropy loss stay finite without changing well-conditioned
/// values.
pub const SIGMOID_EPS: f32 = 1e-6;

const PIXEL_NORM_EPS: f64 = 1e-8;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    Abs(usize),
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    ChanBias {
        a: usize,
        bias: usize,
        chans: usize,
        inner: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        geom: Conv2dShape,
    },
    Relu(usize),
    LeakyRelu(usize, f32),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Mean(usize),
    Sum(usize),
    PixelNorm(usize),
    Upsample2x(usize),
    AvgPool2x(usize),
    Reshape(usize),
    ConcatChan {
        a: usize,
        b: usize,
        ca: usize,
        cb: usize,
        inner: usize,
    },
}

struct Node {
    value: Tensor,
    requires: bool,
    op: Op,
}

/// One recorded forward computation.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f32>>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enter a value that should receive a gradient (a trainable parameter).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.record(value, true, Op::Leaf)
    }

    /// Enter a value that must never receive a gradient (inputs, targets,
    /// frozen parameters).
    pub fn constant(&self, value: Tensor) -> Var {
        self.record(value, false, Op::Leaf)
    }

    fn record(&self, value: Tensor, requires: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires,
            op,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.borrow().len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    fn push(&self, op_name: &'static str, value: Tensor, requires: bool, op: Op) -> Result<Var> {
        if !value.is_all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        Ok(self.record(value, requires, op))
    }

    /// Clone the current value of a variable.
    pub fn value(&self, v: Var) -> Result<Tensor> {
        self.check(v)?;
        Ok(self.nodes.borrow()[v.index].value.clone())
    }

    pub fn shape_of(&self, v: Var) -> Result<Vec<usize>> {
        self.check(v)?;
        Ok(self.nodes.borrow()[v.index].value.shape().to_vec())
    }

    /// Value of a one-element variable.
    pub fn item(&self, v: Var) -> Result<f32> {
        self.check(v)?;
        self.nodes.borrow()[v.index].value.item()
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect
    /// to `v`, or `None` if the sweep never reached it (constants, unused
    /// branches, variables recorded after the sweep).
    pub fn grad(&self, v: Var) -> Result<Option<Tensor>> {
        self.check(v)?;
        let grads = self.grads.borrow();
        match grads.get(v.index).and_then(|g| g.as_ref()) {
            Some(g) => {
                let shape = self.nodes.borrow()[v.index].value.shape().to_vec();
                Ok(Some(Tensor::new(shape, g.clone())?))
            }
            None => Ok(None),
        }
    }

    // ----- elementwise and scalar ops -------------------------------------

    fn binary_same_shape(
        &self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.index].value, &nodes[b.index].value);
            if ta.shape() != tb.shape() {
                return Err(Error::shape(
                    op_name,
                    format!("{:?} vs {:?}", ta.shape(), tb.shape()),
                ));
            }
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (
                Tensor::new(ta.shape().to_vec(), data)?,
                nodes[a.index].requires || nodes[b.index].requires,
            )
        };
        self.push(op_name, value, requires, op(a.index, b.index))
    }

    fn unary(
        &self,
        op_name: &'static str,
        a: Var,
        f: impl Fn(f32) -> f32,
        op: impl Fn(usize) -> Op,
    ) -> Result<Var> {
        self.check(a)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.index].value;
            let data = ta.data().iter().map(|&x| f(x)).collect();
            (
                Tensor::new(ta.shape().to_vec(), data)?,
                nodes[a.index].requires,
            )
        };
        self.push(op_name, value, requires, op(a.index))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&self, a: Var, c: f32) -> Result<Var> {
        self.unary("scale", a, |x| x * c, |i| Op::Scale(i, c))
    }

    pub fn add_scalar(&self, a: Var, c: f32) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar)
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        self.unary("abs", a, f32::abs, Op::Abs)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn leaky_relu(&self, a: Var, slope: f32) -> Result<Var> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            |i| Op::LeakyRelu(i, slope),
        )
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f32::tanh, Op::Tanh)
    }

    /// Numerically pinned logistic function: outputs always lie in
    /// `[SIGMOID_EPS, 1 - SIGMOID_EPS]`.
    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(
            "sigmoid",
            a,
            |x| {
                let s = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                s.clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
            },
            Op::Sigmoid,
        )
    }

    /// Natural logarithm. Non-positive inputs are reported as a non-finite
    /// result rather than silently producing NaN.
    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary("log", a, f32::ln, Op::Log)
    }

    // ----- linear algebra --------------------------------------------------

    /// C(m,n) = A(m,k) * B(k,n) for rank-2 inputs.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (value, requires, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.index].value, &nodes[b.index].value);
            if ta.rank() != 2 || tb.rank() != 2 {
                return Err(Error::shape(
                    "matmul",
                    format!("expected rank 2, got {:?} and {:?}", ta.shape(), tb.shape()),
                ));
            }
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let (k2, n) = (tb.shape()[0], tb.shape()[1]);
            if k != k2 {
                return Err(Error::shape(
                    "matmul",
                    format!("inner dims {} vs {}", k, k2),
                ));
            }
            let data = linalg::matmul(ta.data(), m, k, tb.data(), n);
            (
                Tensor::new(vec![m, n], data)?,
                nodes[a.index].requires || nodes[b.index].requires,
                m,
                k,
                n,
            )
        };
        self.push(
            "matmul",
            value,
            requires,
            Op::Matmul {
                a: a.index,
                b: b.index,
                m,
                k,
                n,
            },
        )
    }

    /// Broadcast a rank-1 bias over the channel axis: rows of a rank-2
    /// matrix (one bias entry per column) or the channel planes of a rank-4
    /// image batch.
    pub fn add_chan_bias(&self, a: Var, bias: Var) -> Result<Var> {
        self.check(a)?;
        self.check(bias)?;
        let (value, requires, chans, inner) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.index].value, &nodes[bias.index].value);
            let (chans, inner) = match ta.rank() {
                2 => (ta.shape()[1], 1),
                4 => (ta.shape()[1], ta.shape()[2] * ta.shape()[3]),
                _ => {
                    return Err(Error::shape(
                        "add_chan_bias",
                        format!("expected rank 2 or 4, got {:?}", ta.shape()),
                    ))
                }
            };
            if tb.shape() != [chans] {
                return Err(Error::shape(
                    "add_chan_bias",
                    format!("bias {:?} does not match {} channels", tb.shape(), chans),
                ));
            }
            let mut data = ta.data().to_vec();
            let bias_data = tb.data();
            for (group, chunk) in data.chunks_mut(inner).enumerate() {
                let bv = bias_data[group % chans];
                for v in chunk {
                    *v += bv;
                }
            }
            (
                Tensor::new(ta.shape().to_vec(), data)?,
                nodes[a.index].requires || nodes[bias.index].requires,
                chans,
                inner,
            )
        };
        self.push(
            "add_chan_bias",
            value,
            requires,
            Op::ChanBias {
                a: a.index,
                bias: bias.index,
                chans,
                inner,
            },
        )
    }

    /// 2-D cross-correlation of a (N,C,H,W) batch with (O,C,kh,kw) kernels.
    pub fn conv2d(&self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        let (value, requires, geom) = {
            let nodes = self.nodes.borrow();
            let (ti, tk) = (&nodes[input.index].value, &nodes[kernel.index].value);
            let geom = Conv2dShape::resolve(ti.shape(), tk.shape(), stride, padding)?;
            (
                linalg::conv2d_raw(ti, tk, stride, padding)?,
                nodes[input.index].requires || nodes[kernel.index].requires,
                geom,
            )
        };
        self.push(
            "conv2d",
            value,
            requires,
            Op::Conv2d {
                input: input.index,
                kernel: kernel.index,
                geom,
            },
        )
    }

    // ----- reductions -------------------------------------------------------

    fn reduce(
        &self,
        op_name: &'static str,
        a: Var,
        divide: bool,
        op: impl Fn(usize) -> Op,
    ) -> Result<Var> {
        self.check(a)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.index].value;
            if ta.numel() == 0 {
                return Err(Error::invalid(op_name, "empty tensor"));
            }
            let total: f64 = ta.data().iter().map(|&v| v as f64).sum();
            let out = if divide {
                total / ta.numel() as f64
            } else {
                total
            };
            (Tensor::scalar(out as f32), nodes[a.index].requires)
        };
        self.push(op_name, value, requires, op(a.index))
    }

    /// Mean over all elements, accumulated in f64.
    pub fn mean(&self, a: Var) -> Result<Var> {
        self.reduce("mean", a, true, Op::Mean)
    }

    /// Sum over all elements, accumulated in f64.
    pub fn sum(&self, a: Var) -> Result<Var> {
        self.reduce("sum", a, false, Op::Sum)
    }

    // ----- image-shaped ops --------------------------------------------------

    /// Per-pixel feature normalization across channels:
    /// `y = x / sqrt(mean_c(x^2) + 1e-8)` for each (batch, y, x) position.
    pub fn pixel_norm(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.index].value;
            if ta.rank() != 4 {
                return Err(Error::shape(
                    "pixel_norm",
                    format!("expected rank 4, got {:?}", ta.shape()),
                ));
            }
            let (b, c, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
            let inner = h * w;
            let src = ta.data();
            let mut data = vec![0.0f32; src.len()];
            for bi in 0..b {
                let base = bi * c * inner;
                for p in 0..inner {
                    let mut sq = 0.0f64;
                    for ci in 0..c {
                        let v = src[base + ci * inner + p] as f64;
                        sq += v * v;
                    }
                    let s = (sq / c as f64 + PIXEL_NORM_EPS).sqrt();
                    for ci in 0..c {
                        let idx = base + ci * inner + p;
                        data[idx] = (src[idx] as f64 / s) as f32;
                    }
                }
            }
            (
                Tensor::new(ta.shape().to_vec(), data)?,
                nodes[a.index].requires,
            )
        };
        self.push("pixel_norm", value, requires, Op::PixelNorm(a.index))
    }

    /// Nearest-neighbour 2x upsampling of a (N,C,H,W) batch.
    pub fn upsample2x(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.index].value;
            if ta.rank() != 4 {
                return Err(Error::shape(
                    "upsample2x",
                    format!("expected rank 4, got {:?}", ta.shape()),
                ));
            }
            let (b, c, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
            let src = ta.data();
            let mut data = vec![0.0f32; b * c * 4 * h * w];
            for plane in 0..b * c {
                let sp = &src[plane * h * w..(plane + 1) * h * w];
                let dp = &mut data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let v = sp[y * w + x];
                        let d0 = 2 * y * 2 * w + 2 * x;
                        dp[d0] = v;
                        dp[d0 + 1] = v;
                        dp[d0 + 2 * w] = v;
                        dp[d0 + 2 * w + 1] = v;
                    }
                }
            }
            (
                Tensor::new(vec![b, c, 2 * h, 2 * w], data)?,
                nodes[a.index].requires,
            )
        };
        self.push("upsample2x", value, requires, Op::Upsample2x(a.index))
    }

    /// 2x2 mean pooling with stride 2; height and width must be even.
    pub fn avgpool2x(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.index].value;
            if ta.rank() != 4 {
                return Err(Error::shape(
                    "avgpool2x",
                    format!("expected rank 4, got {:?}", ta.shape()),
                ));
            }
            let (b, c, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::shape(
                    "avgpool2x",
                    format!("height and width must be even, got {}x{}", h, w),
                ));
            }
            let (oh, ow) = (h / 2, w / 2);
            let src = ta.data();
            let mut data = vec![0.0f32; b * c * oh * ow];
            for plane in 0..b * c {
                let sp = &src[plane * h * w..(plane + 1) * h * w];
                let dp = &mut data[plane * oh * ow..(plane + 1) * oh * ow];
                for y in 0..oh {
                    for x in 0..ow {
                        let s0 = 2 * y * w + 2 * x;
                        dp[y * ow + x] =
                            0.25 * (sp[s0] + sp[s0 + 1] + sp[s0 + w] + sp[s0 + w + 1]);
                    }
                }
            }
            (
                Tensor::new(vec![b, c, oh, ow], data)?,
                nodes[a.index].requires,
            )
        };
        self.push("avgpool2x", value, requires, Op::AvgPool2x(a.index))
    }

    /// View the same elements under a new shape.
    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.check(a)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.index].value;
            (
                ta.clone().reshaped(shape)?,
                nodes[a.index].requires,
            )
        };
        self.push("reshape", value, requires, Op::Reshape(a.index))
    }

    /// Concatenate two (N,C,H,W) batches along the channel axis.
    pub fn concat_chan(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (value, requires, ca, cb, inner) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.index].value, &nodes[b.index].value);
            if ta.rank() != 4 || tb.rank() != 4 {
                return Err(Error::shape("concat_chan", "expected rank 4 inputs"));
            }
            let (n, ca, h, w) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
            let cb = tb.shape()[1];
            if tb.shape()[0] != n || tb.shape()[2] != h || tb.shape()[3] != w {
                return Err(Error::shape(
                    "concat_chan",
                    format!("{:?} vs {:?}", ta.shape(), tb.shape()),
                ));
            }
            let inner = h * w;
            let mut data = Vec::with_capacity((ca + cb) * n * inner);
            for ni in 0..n {
                data.extend_from_slice(&ta.data()[ni * ca * inner..(ni + 1) * ca * inner]);
                data.extend_from_slice(&tb.data()[ni * cb * inner..(ni + 1) * cb * inner]);
            }
            (
                Tensor::new(vec![n, ca + cb, h, w], data)?,
                nodes[a.index].requires || nodes[b.index].requires,
                ca,
                cb,
                inner,
            )
        };
        self.push(
            "concat_chan",
            value,
            requires,
            Op::ConcatChan {
                a: a.index,
                b: b.index,
                ca,
                cb,
                inner,
            },
        )
    }

    // ----- backward ----------------------------------------------------------

    /// Reverse sweep from a one-element loss. Gradients from a previous
    /// sweep on this tape are discarded.
    pub fn backward(&self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[loss.index].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be one element, shape is {:?}",
                    nodes[loss.index].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.index].requires {
            grads[loss.index] = Some(vec![1.0]);
        }
        for i in (0..=loss.index).rev() {
            if grads[i].is_none() {
                continue;
            }
            let (inputs, out) = grads.split_at_mut(i);
            let g = out[0].as_ref().expect("checked above");
            // Closure over the node table: seed zeros on first touch, then
            // accumulate. Only inputs that need gradients get storage.
            let mut acc = |idx: usize, add: &mut dyn FnMut(&mut [f32])| {
                if !nodes[idx].requires {
                    return;
                }
                let slot =
                    inputs[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.numel()]);
                add(slot);
            };
            match nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(a, &mut |ga| {
                        for (d, s) in ga.iter_mut().zip(g) {
                            *d += s;
                        }
                    });
                    acc(b, &mut |gb| {
                        for (d, s) in gb.iter_mut().zip(g) {
                            *d += s;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    acc(a, &mut |ga| {
                        for (d, s) in ga.iter_mut().zip(g) {
                            *d += s;
                        }
                    });
                    acc(b, &mut |gb| {
                        for (d, s) in gb.iter_mut().zip(g) {
                            *d -= s;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a].value.data(), nodes[b].value.data());
                    acc(a, &mut |ga| {
                        for ((d, s), &y) in ga.iter_mut().zip(g).zip(vb) {
                            *d += s * y;
                        }
                    });
                    acc(b, &mut |gb| {
                        for ((d, s), &x) in gb.iter_mut().zip(g).zip(va) {
                            *d += s * x;
                        }
                    });
                }
                Op::Scale(a, c) => acc(a, &mut |ga| {
                    for (d, s) in ga.iter_mut().zip(g) {
                        *d += c * s;
                    }
                }),
                Op::AddScalar(a) => acc(a, &mut |ga| {
                    for (d, s) in ga.iter_mut().zip(g) {
                        *d += s;
                    }
                }),
                Op::Abs(a) => {
                    let va = nodes[a].value.data();
                    acc(a, &mut |ga| {
                        for ((d, s), &x) in ga.iter_mut().zip(g).zip(va) {
                            if x > 0.0 {
                                *d += s;
                            } else if x < 0.0 {
                                *d -= s;
                            }
                        }
                    });
                }
                Op::Matmul { a, b, m, k, n } => {
                    let (va, vb) = (nodes[a].value.data(), nodes[b].value.data());
                    acc(a, &mut |ga| {
                        // dA(m,k) = G(m,n) * B(k,n)^T
                        let part = linalg::matmul_abt(g, m, n, vb, k);
                        for (d, s) in ga.iter_mut().zip(&part) {
                            *d += s;
                        }
                    });
                    acc(b, &mut |gb| {
                        // dB(k,n) = A(m,k)^T * G(m,n)
                        let part = linalg::matmul_atb(va, m, k, g, n);
                        for (d, s) in gb.iter_mut().zip(&part) {
                            *d += s;
                        }
                    });
                }
                Op::ChanBias {
                    a,
                    bias,
                    chans,
                    inner,
                } => {
                    acc(a, &mut |ga| {
                        for (d, s) in ga.iter_mut().zip(g) {
                            *d += s;
                        }
                    });
                    acc(bias, &mut |gb| {
                        for (group, chunk) in g.chunks(inner).enumerate() {
                            let sum: f64 = chunk.iter().map(|&v| v as f64).sum();
                            gb[group % chans] += sum as f32;
                        }
                    });
                }
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => {
                    let need_input = nodes[input].requires;
                    let need_kernel = nodes[kernel].requires;
                    let (gi, gk) = conv2d_grads(
                        &nodes[input].value,
                        &nodes[kernel].value,
                        g,
                        &geom,
                        need_input,
                        need_kernel,
                    );
                    if let Some(gi) = gi {
                        acc(input, &mut |ga| {
                            for (d, s) in ga.iter_mut().zip(&gi) {
                                *d += s;
                            }
                        });
                    }
                    if let Some(gk) = gk {
                        acc(kernel, &mut |gb| {
                            for (d, s) in gb.iter_mut().zip(&gk) {
                                *d += s;
                            }
                        });
                    }
                }
                Op::Relu(a) => {
                    let va = nodes[a].value.data();
                    acc(a, &mut |ga| {
                        for ((d, s), &x) in ga.iter_mut().zip(g).zip(va) {
                            if x > 0.0 {
                                *d += s;
                            }
                        }
                    });
                }
                Op::LeakyRelu(a, slope) => {
                    let va = nodes[a].value.data();
                    acc(a, &mut |ga| {
                        for ((d, s), &x) in ga.iter_mut().zip(g).zip(va) {
                            *d += if x > 0.0 { *s } else { slope * s };
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = nodes[i].value.data();
                    acc(a, &mut |ga| {
                        for ((d, s), &t) in ga.iter_mut().zip(g).zip(y) {
                            *d += s * (1.0 - t * t);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = nodes[i].value.data();
                    acc(a, &mut |ga| {
                        for ((d, s), &t) in ga.iter_mut().zip(g).zip(y) {
                            *d += s * t * (1.0 - t);
                        }
                    });
                }
                Op::Log(a) => {
                    let va = nodes[a].value.data();
                    acc(a, &mut |ga| {
                        for ((d, s), &x) in ga.iter_mut().zip(g).zip(va) {
                            *d += s / x;
                        }
                    });
                }
                Op::Mean(a) => {
                    let scale = g[0] / nodes[a].value.numel() as f32;
                    acc(a, &mut |ga| {
                        for d in ga.iter_mut() {
                            *d += scale;
                        }
                    });
                }
                Op::Sum(a) => {
                    let s = g[0];
                    acc(a, &mut |ga| {
                        for d in ga.iter_mut() {
                            *d += s;
                        }
                    });
                }
                Op::PixelNorm(a) => {
                    let ta = &nodes[a].value;
                    let (b, c, h, w) =
                        (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
                    let inner = h * w;
                    let src = ta.data();
                    acc(a, &mut |ga| {
                        for bi in 0..b {
                            let base = bi * c * inner;
                            for p in 0..inner {
                                let mut sq = 0.0f64;
                                let mut dot = 0.0f64;
                                for ci in 0..c {
                                    let idx = base + ci * inner + p;
                                    let x = src[idx] as f64;
                                    sq += x * x;
                                    dot += g[idx] as f64 * x;
                                }
                                let s = (sq / c as f64 + PIXEL_NORM_EPS).sqrt();
                                let s3 = s * s * s;
                                for ci in 0..c {
                                    let idx = base + ci * inner + p;
                                    let x = src[idx] as f64;
                                    let gv = g[idx] as f64 / s - x * dot / (c as f64 * s3);
                                    ga[idx] += gv as f32;
                                }
                            }
                        }
                    });
                }
                Op::Upsample2x(a) => {
                    let ta = &nodes[a].value;
                    let (b, c, h, w) =
                        (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
                    acc(a, &mut |ga| {
                        for plane in 0..b * c {
                            let gp = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                            let dp = &mut ga[plane * h * w..(plane + 1) * h * w];
                            for y in 0..h {
                                for x in 0..w {
                                    let s0 = 2 * y * 2 * w + 2 * x;
                                    dp[y * w + x] +=
                                        gp[s0] + gp[s0 + 1] + gp[s0 + 2 * w] + gp[s0 + 2 * w + 1];
                                }
                            }
                        }
                    });
                }
                Op::AvgPool2x(a) => {
                    let ta = &nodes[a].value;
                    let (b, c, h, w) =
                        (ta.shape()[0], ta.shape()[1], ta.shape()[2], ta.shape()[3]);
                    let (oh, ow) = (h / 2, w / 2);
                    acc(a, &mut |ga| {
                        for plane in 0..b * c {
                            let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                            let dp = &mut ga[plane * h * w..(plane + 1) * h * w];
                            for y in 0..oh {
                                for x in 0..ow {
                                    let s = 0.25 * gp[y * ow + x];
                                    let d0 = 2 * y * w + 2 * x;
                                    dp[d0] += s;
                                    dp[d0 + 1] += s;
                                    dp[d0 + w] += s;
                                    dp[d0 + w + 1] += s;
                                }
                            }
                        }
                    });
                }
                Op::Reshape(a) => acc(a, &mut |ga| {
                    for (d, s) in ga.iter_mut().zip(g) {
                        *d += s;
                    }
                }),
                Op::ConcatChan {
                    a,
                    b,
                    ca,
                    cb,
                    inner,
                } => {
                    let n = nodes[i].value.shape()[0];
                    let item = (ca + cb) * inner;
                    acc(a, &mut |ga| {
                        for ni in 0..n {
                            let src = &g[ni * item..ni * item + ca * inner];
                            let dst = &mut ga[ni * ca * inner..(ni + 1) * ca * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    acc(b, &mut |gb| {
                        for ni in 0..n {
                            let src = &g[ni * item + ca * inner..(ni + 1) * item];
                            let dst = &mut gb[ni * cb * inner..(ni + 1) * cb * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                }
            }
        }
        for slot in grads.iter().flatten() {
            if !slot.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}
