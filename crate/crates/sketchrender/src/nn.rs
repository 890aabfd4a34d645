//! Shared network building blocks: parameter-backed conv/linear layers
//! and the scalar loss terms both adversarial stages are built from.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Binding, ParamId, ParamSet, Tape, Tensor, Var};

/// Negative slope used by every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f32 = 0.2;

/// Handles of one convolution's weight and bias parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConvP {
    pub w: ParamId,
    pub b: ParamId,
}

/// Register a (c_out, c_in, k, k) convolution with He-normal weights and
/// zero bias under `<name>.w` / `<name>.b`.
pub fn register_conv(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> ConvP {
    let std = (2.0 / (c_in * k * k) as f32).sqrt();
    ConvP {
        w: params.register(format!("{name}.w"), Tensor::randn(rng, [c_out, c_in, k, k], std)),
        b: params.register(format!("{name}.b"), Tensor::zeros([c_out])),
    }
}

pub fn conv_layer(
    tape: &Tape,
    binding: &mut Binding,
    params: &ParamSet,
    x: Var,
    p: &ConvP,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = binding.bind(tape, params, p.w);
    let y = tape.conv2d(x, w, stride, padding)?;
    let b = binding.bind(tape, params, p.b);
    tape.add_chan_bias(y, b)
}

/// Handles of one fully connected layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct FcP {
    pub w: ParamId,
    pub b: ParamId,
}

/// Register a (d_in, d_out) linear map with He-normal weights and zero
/// bias under `<name>.w` / `<name>.b`.
pub fn register_fc(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
) -> FcP {
    let std = (2.0 / d_in as f32).sqrt();
    FcP {
        w: params.register(format!("{name}.w"), Tensor::randn(rng, [d_in, d_out], std)),
        b: params.register(format!("{name}.b"), Tensor::zeros([d_out])),
    }
}

pub fn fc_layer(
    tape: &Tape,
    binding: &mut Binding,
    params: &ParamSet,
    x: Var,
    p: &FcP,
) -> Result<Var> {
    let w = binding.bind(tape, params, p.w);
    let y = tape.matmul(x, w)?;
    let b = binding.bind(tape, params, p.b);
    tape.add_chan_bias(y, b)
}

/// −mean log s: the loss for scores that should be 1.
pub fn bce_against_ones(tape: &Tape, scores: Var) -> Result<Var> {
    let lg = tape.log(scores)?;
    let m = tape.mean(lg)?;
    tape.scale(m, -1.0)
}

/// −mean log(1−s): the loss for scores that should be 0.
pub fn bce_against_zeros(tape: &Tape, scores: Var) -> Result<Var> {
    let neg = tape.scale(scores, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let lg = tape.log(one_minus)?;
    let m = tape.mean(lg)?;
    tape.scale(m, -1.0)
}

/// mean |a−b| over all elements.
pub fn l1_mean(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let ad = tape.abs(d)?;
    tape.mean(ad)
}
