//! Shared helpers for integration tests: a central-difference gradient
//! oracle and the catalogue of per-operation gradient checks.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sketchrender::nn;
use sketchrender::tensor::{Tape, Tensor, Var};

/// Step for central differences. f32 values and an f32 engine put the
/// sweet spot near 1e-2: larger drowns in truncation error, smaller in
/// rounding error.
pub const FD_STEP: f32 = 1e-2;

/// Relative mismatch allowed between analytic and numeric derivatives.
pub const FD_TOL: f64 = 1e-3;

/// Seeded standard-normal tensor for test inputs.
pub fn randn_t(seed: u64, shape: &[usize], std: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&mut rng, shape.to_vec(), std)
}

/// Push every value at least `min_abs` away from zero, keeping its sign.
/// Used for ops with a kink at the origin (abs, relu, leaky relu) so the
/// finite-difference probe never crosses it.
pub fn away_from_zero(mut t: Tensor, min_abs: f32) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < min_abs {
            *v = if *v >= 0.0 { min_abs } else { -min_abs };
        }
    }
    t
}

/// Fold every value into [min, inf) for ops that need positive input.
pub fn positive(mut t: Tensor, min: f32) -> Tensor {
    for v in t.data_mut() {
        *v = v.abs().max(min);
    }
    t
}

/// Check analytic gradients of `build` against central differences.
///
/// `build` maps input variables to a single output variable of any shape;
/// the harness contracts that output with a fixed random cotangent so all
/// output elements influence the scalar loss. Gradients are verified for
/// every element of every input.
pub fn gradcheck(name: &str, inputs: &[Tensor], build: impl Fn(&Tape, &[Var]) -> Var) {
    gradcheck_with(name, inputs, FD_STEP, FD_TOL, build)
}

pub fn gradcheck_with(
    name: &str,
    inputs: &[Tensor],
    step: f32,
    tol: f64,
    build: impl Fn(&Tape, &[Var]) -> Var,
) {
    let weighted_loss = |tape: &Tape, out: Var| -> Var {
        let shape = tape.shape_of(out).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let w = tape.constant(Tensor::randn(&mut rng, shape, 1.0));
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod).unwrap()
    };

    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&tape, &vars);
        let loss = weighted_loss(&tape, out);
        tape.item(loss).unwrap() as f64
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&tape, &vars);
    let loss = weighted_loss(&tape, out);
    tape.backward(loss).unwrap();

    for (i, input) in inputs.iter().enumerate() {
        let grad = tape
            .grad(vars[i])
            .unwrap()
            .unwrap_or_else(|| panic!("{name}: input {i} received no gradient"));
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step as f64);
            let an = grad.data()[e] as f64;
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            assert!(
                rel < tol,
                "{name}: input {i} element {e}: analytic {an} vs numeric {fd} (rel err {rel:.2e})"
            );
        }
    }
}

// ---- per-operation checks -------------------------------------------------
//
// Each function panics on failure and is parameterised by a seed so the
// same check can run over many independent random inputs. They serve both
// as individual #[test] bodies and as entries of the acceptance run.

/// Derive a distinct input seed from the check seed and a slot index.
fn sub(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

pub fn check_add(seed: u64) {
    let a = randn_t(sub(seed, 1), &[2, 3], 1.0);
    let b = randn_t(sub(seed, 2), &[2, 3], 1.0);
    gradcheck("add", &[a, b], |t, v| t.add(v[0], v[1]).unwrap());
}

pub fn check_sub(seed: u64) {
    let a = randn_t(sub(seed, 1), &[4], 1.0);
    let b = randn_t(sub(seed, 2), &[4], 1.0);
    gradcheck("sub", &[a, b], |t, v| t.sub(v[0], v[1]).unwrap());
}

pub fn check_mul(seed: u64) {
    let a = randn_t(sub(seed, 1), &[2, 4], 1.0);
    let b = randn_t(sub(seed, 2), &[2, 4], 1.0);
    gradcheck("mul", &[a, b], |t, v| t.mul(v[0], v[1]).unwrap());
}

pub fn check_scale(seed: u64) {
    let a = randn_t(sub(seed, 1), &[5], 1.0);
    gradcheck("scale", &[a], |t, v| t.scale(v[0], -1.7).unwrap());
}

pub fn check_add_scalar(seed: u64) {
    let a = randn_t(sub(seed, 1), &[5], 1.0);
    gradcheck("add_scalar", &[a], |t, v| t.add_scalar(v[0], 0.3).unwrap());
}

pub fn check_abs(seed: u64) {
    let a = away_from_zero(randn_t(sub(seed, 1), &[6], 1.0), 0.2);
    gradcheck("abs", &[a], |t, v| t.abs(v[0]).unwrap());
}

pub fn check_matmul(seed: u64) {
    let a = randn_t(sub(seed, 1), &[3, 4], 1.0);
    let b = randn_t(sub(seed, 2), &[4, 2], 1.0);
    gradcheck("matmul", &[a, b], |t, v| t.matmul(v[0], v[1]).unwrap());
}

pub fn check_chan_bias(seed: u64) {
    let a = randn_t(sub(seed, 1), &[2, 3, 2, 2], 1.0);
    let bias = randn_t(sub(seed, 2), &[3], 1.0);
    gradcheck("add_chan_bias(nchw)", &[a, bias], |t, v| {
        t.add_chan_bias(v[0], v[1]).unwrap()
    });
    let rows = randn_t(sub(seed, 3), &[4, 3], 1.0);
    let bias2 = randn_t(sub(seed, 4), &[3], 1.0);
    gradcheck("add_chan_bias(rows)", &[rows, bias2], |t, v| {
        t.add_chan_bias(v[0], v[1]).unwrap()
    });
}

pub fn check_conv2d(seed: u64) {
    // Padding + unit stride, the configuration used throughout the
    // generators. Convolution is bilinear, so central differences carry
    // no truncation error and the stock step is fine.
    let input = randn_t(sub(seed, 1), &[1, 2, 5, 5], 1.0);
    let kernel = randn_t(sub(seed, 2), &[3, 2, 3, 3], 0.5);
    gradcheck("conv2d(s1,p1)", &[input, kernel], |t, v| {
        t.conv2d(v[0], v[1], 1, 1).unwrap()
    });
    // Strided, as used by the patch discriminator.
    let input = randn_t(sub(seed, 3), &[2, 1, 6, 6], 1.0);
    let kernel = randn_t(sub(seed, 4), &[2, 1, 3, 3], 0.5);
    gradcheck("conv2d(s2,p1)", &[input, kernel], |t, v| {
        t.conv2d(v[0], v[1], 2, 1).unwrap()
    });
}

pub fn check_relu(seed: u64) {
    let a = away_from_zero(randn_t(sub(seed, 1), &[3, 3], 1.0), 0.2);
    gradcheck("relu", &[a], |t, v| t.relu(v[0]).unwrap());
}

pub fn check_leaky_relu(seed: u64) {
    let a = away_from_zero(randn_t(sub(seed, 1), &[3, 3], 1.0), 0.2);
    gradcheck("leaky_relu", &[a], |t, v| t.leaky_relu(v[0], 0.2).unwrap());
}

pub fn check_tanh(seed: u64) {
    let a = randn_t(sub(seed, 1), &[2, 3], 1.0);
    gradcheck("tanh", &[a], |t, v| t.tanh(v[0]).unwrap());
}

pub fn check_sigmoid(seed: u64) {
    // Stay in the well-conditioned band: the output pin at 1e-6 flattens
    // the true derivative only beyond |x| ~ 13.
    let a = randn_t(sub(seed, 1), &[2, 3], 1.5);
    gradcheck("sigmoid", &[a], |t, v| t.sigmoid(v[0]).unwrap());
}

pub fn check_log(seed: u64) {
    let a = positive(randn_t(sub(seed, 1), &[5], 1.0), 0.4);
    gradcheck("log", &[a], |t, v| t.log(v[0]).unwrap());
}

pub fn check_mean(seed: u64) {
    let a = randn_t(sub(seed, 1), &[3, 4], 1.0);
    gradcheck("mean", &[a], |t, v| t.mean(v[0]).unwrap());
}

pub fn check_sum(seed: u64) {
    let a = randn_t(sub(seed, 1), &[3, 4], 1.0);
    gradcheck("sum", &[a], |t, v| t.sum(v[0]).unwrap());
}

pub fn check_pixel_norm(seed: u64) {
    // The normalization is strongly curved where channel vectors are
    // short; keep values away from zero and probe with a smaller step so
    // truncation error stays under the shared bound. The gradient itself
    // is perfectly well defined everywhere else, which is what's checked.
    let a = away_from_zero(randn_t(sub(seed, 1), &[1, 3, 2, 2], 1.0), 0.25);
    gradcheck_with("pixel_norm", &[a], 3e-3, FD_TOL, |t, v| {
        t.pixel_norm(v[0]).unwrap()
    });
}

pub fn check_upsample2x(seed: u64) {
    let a = randn_t(sub(seed, 1), &[1, 2, 3, 3], 1.0);
    gradcheck("upsample2x", &[a], |t, v| t.upsample2x(v[0]).unwrap());
}

pub fn check_avgpool2x(seed: u64) {
    let a = randn_t(sub(seed, 1), &[1, 2, 4, 4], 1.0);
    gradcheck("avgpool2x", &[a], |t, v| t.avgpool2x(v[0]).unwrap());
}

pub fn check_reshape(seed: u64) {
    let a = randn_t(sub(seed, 1), &[2, 6], 1.0);
    gradcheck("reshape", &[a], |t, v| t.reshape(v[0], vec![3, 4]).unwrap());
}

pub fn check_concat_chan(seed: u64) {
    let a = randn_t(sub(seed, 1), &[2, 1, 2, 2], 1.0);
    let b = randn_t(sub(seed, 2), &[2, 2, 2, 2], 1.0);
    gradcheck("concat_chan", &[a, b], |t, v| {
        t.concat_chan(v[0], v[1]).unwrap()
    });
}

pub fn check_composite_network(seed: u64) {
    // A miniature end-to-end net touching most ops at once:
    // conv -> bias -> tanh -> shift -> pixel norm -> pool -> flatten ->
    // linear -> sigmoid -> log. Every stage is smooth, and the shift
    // keeps channel vectors well away from the normalization's singular
    // point at zero, so the check holds for arbitrary seeds. The deep
    // chain still compounds curvature; a smaller probe step keeps the
    // truncation error under the shared bound.
    let img = randn_t(sub(seed, 1), &[2, 1, 4, 4], 1.0);
    let kernel = randn_t(sub(seed, 2), &[2, 1, 3, 3], 0.5);
    let bias = randn_t(sub(seed, 3), &[2], 0.5);
    let w = randn_t(sub(seed, 4), &[8, 3], 0.5);
    let b2 = randn_t(sub(seed, 5), &[3], 0.5);
    gradcheck_with("composite", &[img, kernel, bias, w, b2], 3e-3, FD_TOL, |t, v| {
        let c = t.conv2d(v[0], v[1], 1, 1).unwrap();
        let c = t.add_chan_bias(c, v[2]).unwrap();
        let c = t.tanh(c).unwrap();
        let c = t.add_scalar(c, 1.5).unwrap();
        let c = t.pixel_norm(c).unwrap();
        let c = t.avgpool2x(c).unwrap();
        let flat = t.reshape(c, vec![2, 8]).unwrap();
        let h = t.matmul(flat, v[3]).unwrap();
        let h = t.add_chan_bias(h, v[4]).unwrap();
        let s = t.sigmoid(h).unwrap();
        t.log(s).unwrap()
    });
}

pub fn check_sketch_gan_loss(seed: u64) {
    // The saturating two-player objective used by the sketch stage, taken
    // at the discriminator-logit interface. Discriminator side first:
    // −mean log σ(real) − mean log(1−σ(fake)).
    let real = randn_t(sub(seed, 1), &[4, 6], 1.5);
    let fake = randn_t(sub(seed, 2), &[4, 6], 1.5);
    gradcheck("sketch_gan_loss(d)", &[real, fake], |t, v| {
        let sr = t.sigmoid(v[0]).unwrap();
        let sf = t.sigmoid(v[1]).unwrap();
        let lr = nn::bce_against_ones(t, sr).unwrap();
        let lf = nn::bce_against_zeros(t, sf).unwrap();
        t.add(lr, lf).unwrap()
    });
    // Generator side: −mean log σ(fake).
    let fake = randn_t(sub(seed, 3), &[4, 6], 1.5);
    gradcheck("sketch_gan_loss(g)", &[fake], |t, v| {
        let sf = t.sigmoid(v[0]).unwrap();
        nn::bce_against_ones(t, sf).unwrap()
    });
}

pub fn check_render_loss(seed: u64) {
    // The render-stage generator objective: adversarial term plus the
    // L1 term at its default weight of 100. The candidate is held a safe
    // distance from the target so the probe never crosses the |·| kink.
    let logits = randn_t(sub(seed, 1), &[2, 1, 3, 3], 1.5);
    let target = randn_t(sub(seed, 2), &[2, 3, 4, 4], 1.0);
    let gap = away_from_zero(randn_t(sub(seed, 3), &[2, 3, 4, 4], 1.0), 0.3);
    let mut candidate = target.clone();
    for (c, g) in candidate.data_mut().iter_mut().zip(gap.data()) {
        *c += g;
    }
    gradcheck("render_loss", &[logits, candidate, target], |t, v| {
        let s = t.sigmoid(v[0]).unwrap();
        let adv = nn::bce_against_ones(t, s).unwrap();
        let l1 = nn::l1_mean(t, v[1], v[2]).unwrap();
        let weighted = t.scale(l1, 100.0).unwrap();
        t.add(adv, weighted).unwrap()
    });
}

/// Every gradient check in one table, for the acceptance run.
pub fn all_gradient_checks() -> &'static [(&'static str, fn(u64))] {
    &[
        ("add", check_add),
        ("sub", check_sub),
        ("mul", check_mul),
        ("scale", check_scale),
        ("add_scalar", check_add_scalar),
        ("abs", check_abs),
        ("matmul", check_matmul),
        ("add_chan_bias", check_chan_bias),
        ("conv2d", check_conv2d),
        ("relu", check_relu),
        ("leaky_relu", check_leaky_relu),
        ("tanh", check_tanh),
        ("sigmoid", check_sigmoid),
        ("log", check_log),
        ("mean", check_mean),
        ("sum", check_sum),
        ("pixel_norm", check_pixel_norm),
        ("upsample2x", check_upsample2x),
        ("avgpool2x", check_avgpool2x),
        ("reshape", check_reshape),
        ("concat_chan", check_concat_chan),
        ("composite", check_composite_network),
        ("sketch_gan_loss", check_sketch_gan_loss),
        ("render_loss", check_render_loss),
    ]
}
