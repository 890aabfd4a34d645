//! Progressive sketch generator and its discriminator.
//!
//! The generator starts at 4x4 and doubles resolution per level: level k
//! emits a one-channel 2^{k+1} x 2^{k+1} draft through a tanh head. While
//! a freshly grown level fades in, the previous head and the new head are
//! blended. The blend runs on head pre-activations with tanh applied last:
//! nearest-neighbor upsampling commutes with tanh exactly, so the fade
//! endpoints match the single-head paths bit for bit, and every output
//! stays inside [-1,1] at every fade position. All levels' parameters are
//! allocated up front, so growing only advances counters and checkpoint
//! layouts do not depend on training progress.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    bce_against_ones, bce_against_zeros, conv_layer, fc_layer, register_conv, register_fc,
    ConvP, FcP, LEAKY_SLOPE,
};
use crate::tensor::{AdamState, Binding, ParamId, ParamSet, Tape, Tensor, Var};

/// Feature channels of the block working at level `k` (64 at 4x4,
/// halving per level, floor 16).
fn width(level: usize) -> usize {
    (64usize >> (level - 1)).max(16)
}

/// The doubling resolution ladder: level k covers 2^{k+1} pixels a side.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionSchedule {
    pub levels: usize,
    pub images_per_level: usize,
    pub fade_fraction: f32,
}

impl ResolutionSchedule {
    pub fn new(levels: usize, images_per_level: usize, fade_fraction: f32) -> Result<Self> {
        if !(1..=8).contains(&levels) {
            return Err(Error::invalid("schedule", "levels must be in 1..=8"));
        }
        if images_per_level == 0 {
            return Err(Error::invalid("schedule", "images_per_level must be positive"));
        }
        if !(fade_fraction > 0.0 && fade_fraction < 1.0) {
            return Err(Error::invalid("schedule", "fade_fraction must lie in (0,1)"));
        }
        Ok(ResolutionSchedule { levels, images_per_level, fade_fraction })
    }

    /// Schedule whose final level emits `resolution`-sized images.
    pub fn for_resolution(
        resolution: usize,
        images_per_level: usize,
        fade_fraction: f32,
    ) -> Result<Self> {
        if !resolution.is_power_of_two() || resolution < 4 {
            return Err(Error::invalid(
                "schedule",
                "resolution must be a power of two, at least 4",
            ));
        }
        Self::new(resolution.trailing_zeros() as usize - 1, images_per_level, fade_fraction)
    }

    pub fn resolution(&self, level: usize) -> usize {
        assert!((1..=self.levels).contains(&level), "level {level} out of schedule");
        1 << (level + 1)
    }

    pub fn final_resolution(&self) -> usize {
        self.resolution(self.levels)
    }

    /// Fade coefficient after `seen` images of this level's budget; the
    /// first level has nothing to blend with and is always fully faded in.
    pub fn alpha_for(&self, level: usize, seen: usize) -> f32 {
        if level <= 1 {
            return 1.0;
        }
        let fade_images = (self.images_per_level as f32 * self.fade_fraction).max(1.0);
        (seen as f32 / fade_images).min(1.0)
    }
}

/// One draw of noise and latent code; the generator consumes z ⊙ l.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Tensor,
    pub l: Tensor,
}

impl LatentSample {
    pub fn combined(&self) -> Tensor {
        let data = self
            .z
            .data()
            .iter()
            .zip(self.l.data())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::new(self.z.shape().to_vec(), data).expect("same length")
    }
}

/// z is i.i.d. standard normal; l defaults to all ones, so z ⊙ l = z.
/// (A trainable latent code is the generator's own parameter instead.)
pub fn sample_latent(rng: &mut impl Rng, latent_dim: usize) -> LatentSample {
    LatentSample {
        z: Tensor::randn(rng, [latent_dim], 1.0),
        l: Tensor::filled([latent_dim], 1.0),
    }
}

/// Stack `n` combined latent draws into an (n, latent_dim) batch.
pub fn latent_batch(rng: &mut impl Rng, n: usize, latent_dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * latent_dim);
    for _ in 0..n {
        data.extend(sample_latent(rng, latent_dim).combined().into_data());
    }
    Tensor::new([n, latent_dim], data).expect("sized above")
}

/// (1−α)·upsample2x(low) + α·high, with exact endpoints: α=0 returns the
/// upsampled low input unchanged and α=1 returns high unchanged.
pub fn fade_blend(tape: &Tape, low: Var, high: Var, alpha: f32) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("fade_blend", format!("alpha {alpha} outside [0,1]")));
    }
    let ls = tape.shape_of(low)?;
    let hs = tape.shape_of(high)?;
    let compatible = ls.len() == 4
        && hs.len() == 4
        && hs[0] == ls[0]
        && hs[1] == ls[1]
        && hs[2] == 2 * ls[2]
        && hs[3] == 2 * ls[3];
    if !compatible {
        return Err(Error::shape(
            "fade_blend",
            format!("low {ls:?} must upsample to high {hs:?}"),
        ));
    }
    if alpha == 1.0 {
        return Ok(high);
    }
    let up = tape.upsample2x(low)?;
    if alpha == 0.0 {
        return Ok(up);
    }
    let a = tape.scale(up, 1.0 - alpha)?;
    let b = tape.scale(high, alpha)?;
    tape.add(a, b)
}

/// Blend two same-shape recordings; endpoints return the inputs untouched.
fn lerp_same_shape(tape: &Tape, a: Var, b: Var, alpha: f32) -> Result<Var> {
    if alpha == 0.0 {
        Ok(a)
    } else if alpha == 1.0 {
        Ok(b)
    } else {
        let sa = tape.scale(a, 1.0 - alpha)?;
        let sb = tape.scale(b, alpha)?;
        tape.add(sa, sb)
    }
}

#[derive(Debug, Clone)]
pub struct SketchGenerator {
    latent_dim: usize,
    levels: usize,
    level: usize,
    alpha: f32,
    latent_l: Option<ParamId>,
    fc: FcP,
    base_conv: ConvP,
    up_blocks: Vec<(ConvP, ConvP)>,
    heads: Vec<ConvP>,
}

impl SketchGenerator {
    /// Register all parameters (every level up front) under `gs.*`.
    pub fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        latent_dim: usize,
        levels: usize,
        trainable_latent: bool,
    ) -> Result<Self> {
        if latent_dim == 0 || !(1..=8).contains(&levels) {
            return Err(Error::invalid(
                "generator",
                "latent_dim must be positive and levels in 1..=8",
            ));
        }
        let latent_l = trainable_latent
            .then(|| params.register("gs.latent_l", Tensor::filled([1, latent_dim], 1.0)));
        let c1 = width(1);
        let fc = register_fc(params, rng, "gs.fc", latent_dim, c1 * 16);
        let base_conv = register_conv(params, rng, "gs.block1.conv", c1, c1, 3);
        let mut up_blocks = Vec::new();
        for k in 2..=levels {
            let (ci, co) = (width(k - 1), width(k));
            up_blocks.push((
                register_conv(params, rng, &format!("gs.block{k}.conv0"), co, ci, 3),
                register_conv(params, rng, &format!("gs.block{k}.conv1"), co, co, 3),
            ));
        }
        let heads = (1..=levels)
            .map(|k| register_conv(params, rng, &format!("gs.head{k}"), 1, width(k), 1))
            .collect();
        Ok(SketchGenerator {
            latent_dim,
            levels,
            level: 1,
            alpha: 1.0,
            latent_l,
            fc,
            base_conv,
            up_blocks,
            heads,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn resolution(&self) -> usize {
        1 << (self.level + 1)
    }

    pub fn set_alpha(&mut self, alpha: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("generator", format!("alpha {alpha} outside [0,1]")));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// Jump to a recorded training position (checkpoint restore).
    pub fn restore_progress(&mut self, level: usize, alpha: f32) -> Result<()> {
        if !(1..=self.levels).contains(&level) {
            return Err(Error::invalid("generator", format!("level {level} out of range")));
        }
        self.level = level;
        self.set_alpha(alpha)
    }

    /// Record the forward pass for an (n, latent_dim) batch of combined
    /// latents; returns an (n, 1, R, R) draft batch in [-1,1].
    pub fn forward(
        &self,
        tape: &Tape,
        binding: &mut Binding,
        params: &ParamSet,
        z: &Tensor,
    ) -> Result<Var> {
        if z.rank() != 2 || z.shape()[1] != self.latent_dim {
            return Err(Error::shape(
                "generator",
                format!("latent batch must be (n, {}), got {:?}", self.latent_dim, z.shape()),
            ));
        }
        let n = z.shape()[0];
        let mut zv = tape.constant(z.clone());
        if let Some(lid) = self.latent_l {
            let l = binding.bind(tape, params, lid);
            let ones = tape.constant(Tensor::filled([n, 1], 1.0));
            let tiled = tape.matmul(ones, l)?;
            zv = tape.mul(zv, tiled)?;
        }
        let c1 = width(1);
        let mut x = fc_layer(tape, binding, params, zv, &self.fc)?;
        x = tape.reshape(x, [n, c1, 4, 4])?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        x = tape.pixel_norm(x)?;
        x = conv_layer(tape, binding, params, x, &self.base_conv, 1, 1)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        x = tape.pixel_norm(x)?;
        let mut below = None;
        for k in 2..=self.level {
            below = Some(x);
            let (conv0, conv1) = &self.up_blocks[k - 2];
            x = tape.upsample2x(x)?;
            x = conv_layer(tape, binding, params, x, conv0, 1, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
            x = tape.pixel_norm(x)?;
            x = conv_layer(tape, binding, params, x, conv1, 1, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
            x = tape.pixel_norm(x)?;
        }
        let high = conv_layer(tape, binding, params, x, &self.heads[self.level - 1], 1, 0)?;
        let logits = if self.level >= 2 && self.alpha < 1.0 {
            let feats = below.expect("level >= 2 has a lower block");
            let low =
                conv_layer(tape, binding, params, feats, &self.heads[self.level - 2], 1, 0)?;
            fade_blend(tape, low, high, self.alpha)?
        } else {
            high
        };
        tape.tanh(logits)
    }

    /// Forward pass without recording gradients.
    pub fn synthesize(&self, params: &ParamSet, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let mut binding = Binding::frozen();
        let out = self.forward(&tape, &mut binding, params, z)?;
        tape.value(out)
    }
}

#[derive(Debug, Clone)]
pub struct SketchDiscriminator {
    levels: usize,
    level: usize,
    alpha: f32,
    from_heads: Vec<ConvP>,
    down_blocks: Vec<(ConvP, ConvP)>,
    final_conv: ConvP,
    fc: FcP,
}

impl SketchDiscriminator {
    /// Register all parameters (every level up front) under `ds.*`.
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, levels: usize) -> Result<Self> {
        if !(1..=8).contains(&levels) {
            return Err(Error::invalid("discriminator", "levels must be in 1..=8"));
        }
        let from_heads = (1..=levels)
            .map(|k| register_conv(params, rng, &format!("ds.from{k}"), width(k), 1, 1))
            .collect();
        let mut down_blocks = Vec::new();
        for k in 2..=levels {
            let (ci, co) = (width(k), width(k - 1));
            down_blocks.push((
                register_conv(params, rng, &format!("ds.block{k}.conv0"), ci, ci, 3),
                register_conv(params, rng, &format!("ds.block{k}.conv1"), co, ci, 3),
            ));
        }
        let c1 = width(1);
        let final_conv = register_conv(params, rng, "ds.final", c1, c1, 3);
        let fc = register_fc(params, rng, "ds.fc", c1 * 16, 1);
        Ok(SketchDiscriminator {
            levels,
            level: 1,
            alpha: 1.0,
            from_heads,
            down_blocks,
            final_conv,
            fc,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn resolution(&self) -> usize {
        1 << (self.level + 1)
    }

    pub fn set_alpha(&mut self, alpha: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(
                "discriminator",
                format!("alpha {alpha} outside [0,1]"),
            ));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// Jump to a recorded training position (checkpoint restore).
    pub fn restore_progress(&mut self, level: usize, alpha: f32) -> Result<()> {
        if !(1..=self.levels).contains(&level) {
            return Err(Error::invalid(
                "discriminator",
                format!("level {level} out of range"),
            ));
        }
        self.level = level;
        self.set_alpha(alpha)
    }

    fn down_block(
        &self,
        tape: &Tape,
        binding: &mut Binding,
        params: &ParamSet,
        x: Var,
        k: usize,
    ) -> Result<Var> {
        let (conv0, conv1) = &self.down_blocks[k - 2];
        let mut x = conv_layer(tape, binding, params, x, conv0, 1, 1)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        x = conv_layer(tape, binding, params, x, conv1, 1, 1)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        tape.avgpool2x(x)
    }

    /// Score an (n, 1, R, R) recording at the current level; returns
    /// (n, 1) sigmoid scores in (0,1).
    pub fn forward(
        &self,
        tape: &Tape,
        binding: &mut Binding,
        params: &ParamSet,
        image: Var,
    ) -> Result<Var> {
        let s = tape.shape_of(image)?;
        let r = self.resolution();
        if s.len() != 4 || s[1] != 1 || s[2] != r || s[3] != r {
            return Err(Error::shape(
                "discriminator",
                format!("expected (n, 1, {r}, {r}) at level {}, got {s:?}", self.level),
            ));
        }
        let n = s[0];
        let mut x;
        if self.level == 1 {
            x = conv_layer(tape, binding, params, image, &self.from_heads[0], 1, 0)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        } else {
            let mut hi =
                conv_layer(tape, binding, params, image, &self.from_heads[self.level - 1], 1, 0)?;
            hi = tape.leaky_relu(hi, LEAKY_SLOPE)?;
            hi = self.down_block(tape, binding, params, hi, self.level)?;
            x = if self.alpha < 1.0 {
                let small = tape.avgpool2x(image)?;
                let mut lo = conv_layer(
                    tape,
                    binding,
                    params,
                    small,
                    &self.from_heads[self.level - 2],
                    1,
                    0,
                )?;
                lo = tape.leaky_relu(lo, LEAKY_SLOPE)?;
                lerp_same_shape(tape, lo, hi, self.alpha)?
            } else {
                hi
            };
            for k in (2..self.level).rev() {
                x = self.down_block(tape, binding, params, x, k)?;
            }
        }
        x = conv_layer(tape, binding, params, x, &self.final_conv, 1, 1)?;
        x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        let x = tape.reshape(x, [n, width(1) * 16])?;
        let x = fc_layer(tape, binding, params, x, &self.fc)?;
        tape.sigmoid(x)
    }
}

/// Advance both networks to the next level with a fresh fade.
pub fn grow(gen: &mut SketchGenerator, disc: &mut SketchDiscriminator) -> Result<()> {
    if gen.level != disc.level {
        return Err(Error::invalid("grow", "generator and discriminator levels diverged"));
    }
    if gen.alpha < 1.0 || disc.alpha < 1.0 {
        return Err(Error::invalid("grow", "fade still in progress (alpha < 1)"));
    }
    if gen.level >= gen.levels {
        return Err(Error::invalid("grow", "already at the final level"));
    }
    gen.level += 1;
    disc.level += 1;
    gen.alpha = 0.0;
    disc.alpha = 0.0;
    Ok(())
}

fn validate_real_batch(real: &Tensor, resolution: usize) -> Result<()> {
    let s = real.shape();
    if real.rank() != 4 || s[1] != 1 || s[2] != resolution || s[3] != resolution {
        return Err(Error::shape(
            "gan_step",
            format!("real batch must be (n, 1, {resolution}, {resolution}), got {s:?}"),
        ));
    }
    if real.data().iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("gan_step", "real sketches must be -1/+1 valued"));
    }
    Ok(())
}

/// One discriminator update: push real scores toward 1 and scores of the
/// (frozen) generator's samples toward 0. Returns the discriminator loss.
pub fn sketch_disc_step(
    gen: &SketchGenerator,
    disc: &SketchDiscriminator,
    params_g: &ParamSet,
    params_d: &mut ParamSet,
    opt_d: &mut AdamState,
    real: &Tensor,
    z: &Tensor,
) -> Result<f32> {
    validate_real_batch(real, disc.resolution())?;
    let tape = Tape::new();
    let mut bind_g = Binding::frozen();
    let mut bind_d = Binding::trainable();
    let fake = gen.forward(&tape, &mut bind_g, params_g, z)?;
    let s_fake = disc.forward(&tape, &mut bind_d, params_d, fake)?;
    let real_v = tape.constant(real.clone());
    let s_real = disc.forward(&tape, &mut bind_d, params_d, real_v)?;
    let term_real = bce_against_ones(&tape, s_real)?;
    let term_fake = bce_against_zeros(&tape, s_fake)?;
    let loss = tape.add(term_real, term_fake)?;
    tape.backward(loss)?;
    opt_d.step(params_d, &tape, &bind_d)?;
    tape.item(loss)
}

/// One non-saturating generator update: push the discriminator's scores
/// of fresh samples toward 1. Returns the generator loss.
pub fn sketch_gen_step(
    gen: &SketchGenerator,
    disc: &SketchDiscriminator,
    params_g: &mut ParamSet,
    params_d: &ParamSet,
    opt_g: &mut AdamState,
    z: &Tensor,
) -> Result<f32> {
    let tape = Tape::new();
    let mut bind_g = Binding::trainable();
    let mut bind_d = Binding::frozen();
    let fake = gen.forward(&tape, &mut bind_g, params_g, z)?;
    let s_fake = disc.forward(&tape, &mut bind_d, params_d, fake)?;
    let loss = bce_against_ones(&tape, s_fake)?;
    tape.backward(loss)?;
    opt_g.step(params_g, &tape, &bind_g)?;
    tape.item(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub loss_d: f32,
    pub loss_g: f32,
}

/// One full adversarial step: discriminator update, then generator
/// update, each on its own latent draw.
pub fn sketch_gan_step(
    gen: &SketchGenerator,
    disc: &SketchDiscriminator,
    params_g: &mut ParamSet,
    params_d: &mut ParamSet,
    opt_g: &mut AdamState,
    opt_d: &mut AdamState,
    real: &Tensor,
    rng: &mut impl Rng,
) -> Result<GanLosses> {
    let n = real.shape()[0];
    let z_d = latent_batch(rng, n, gen.latent_dim());
    let loss_d = sketch_disc_step(gen, disc, params_g, params_d, opt_d, real, &z_d)?;
    let z_g = latent_batch(rng, n, gen.latent_dim());
    let loss_g = sketch_gen_step(gen, disc, params_g, params_d, opt_g, &z_g)?;
    Ok(GanLosses { loss_d, loss_g })
}

/// Both adversarial losses on a fixed batch, with no update.
pub fn evaluate_gan_losses(
    gen: &SketchGenerator,
    disc: &SketchDiscriminator,
    params_g: &ParamSet,
    params_d: &ParamSet,
    real: &Tensor,
    z: &Tensor,
) -> Result<GanLosses> {
    validate_real_batch(real, disc.resolution())?;
    let tape = Tape::new();
    let mut binding = Binding::frozen();
    let fake = gen.forward(&tape, &mut binding, params_g, z)?;
    let s_fake = disc.forward(&tape, &mut binding, params_d, fake)?;
    let real_v = tape.constant(real.clone());
    let s_real = disc.forward(&tape, &mut binding, params_d, real_v)?;
    let term_real = bce_against_ones(&tape, s_real)?;
    let term_fake = bce_against_zeros(&tape, s_fake)?;
    let loss_d = tape.item(tape.add(term_real, term_fake)?)?;
    let loss_g = tape.item(bce_against_ones(&tape, s_fake)?)?;
    Ok(GanLosses { loss_d, loss_g })
}

/// Fraction of correct real-vs-fake calls at threshold 0.5.
pub fn discriminator_accuracy(
    gen: &SketchGenerator,
    disc: &SketchDiscriminator,
    params_g: &ParamSet,
    params_d: &ParamSet,
    real: &Tensor,
    z: &Tensor,
) -> Result<f64> {
    validate_real_batch(real, disc.resolution())?;
    let tape = Tape::new();
    let mut binding = Binding::frozen();
    let fake = gen.forward(&tape, &mut binding, params_g, z)?;
    let s_fake = tape.value(disc.forward(&tape, &mut binding, params_d, fake)?)?;
    let real_v = tape.constant(real.clone());
    let s_real = tape.value(disc.forward(&tape, &mut binding, params_d, real_v)?)?;
    let correct = s_real.data().iter().filter(|&&s| s > 0.5).count()
        + s_fake.data().iter().filter(|&&s| s < 0.5).count();
    Ok(correct as f64 / (s_real.numel() + s_fake.numel()) as f64)
}
