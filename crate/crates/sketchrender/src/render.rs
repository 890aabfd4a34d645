//! Sketch-to-color renderer: a U-Net generator conditioned on a one-channel
//! sketch, a patch discriminator scoring (image, sketch) pairs, and the
//! combined adversarial + weighted-L1 objective.
//!
//! The same U-Net doubles as the segmentation network for the pretraining
//! benchmark by switching to one output channel and a sigmoid head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    bce_against_ones, bce_against_zeros, conv_layer, l1_mean, register_conv, ConvP, LEAKY_SLOPE,
};
use crate::tensor::{AdamState, Binding, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalAct {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_chans: usize,
    pub out_chans: usize,
    /// Number of stride-2 encoder blocks; inputs must divide by 2^depth.
    pub depth: usize,
    pub base_width: usize,
    pub final_act: FinalAct,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_chans: 1,
            out_chans: 3,
            depth: 4,
            base_width: 32,
            final_act: FinalAct::Tanh,
        }
    }
}

impl UNetConfig {
    fn validate(&self) -> Result<()> {
        if self.in_chans == 0 || self.out_chans == 0 || self.base_width == 0 {
            return Err(Error::invalid("unet", "channel counts must be positive"));
        }
        if !(1..=6).contains(&self.depth) {
            return Err(Error::invalid("unet", "depth must be in 1..=6"));
        }
        Ok(())
    }

    fn width(&self, k: usize) -> usize {
        (self.base_width << k).min(512)
    }
}

/// Encoder-decoder with skip concatenations at every shared resolution;
/// the outermost skip is the input itself.
#[derive(Debug, Clone)]
pub struct UNetRenderer {
    cfg: UNetConfig,
    enc: Vec<ConvP>,
    dec_up: Vec<ConvP>,
    dec_merge: Vec<ConvP>,
    head: ConvP,
}

impl UNetRenderer {
    /// Register all parameters under `<prefix>.*`.
    pub fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        prefix: &str,
        cfg: UNetConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut enc = Vec::with_capacity(cfg.depth);
        for k in 0..cfg.depth {
            let c_in = if k == 0 { cfg.in_chans } else { cfg.width(k - 1) };
            enc.push(register_conv(
                params,
                rng,
                &format!("{prefix}.enc{k}"),
                cfg.width(k),
                c_in,
                3,
            ));
        }
        let mut dec_up = Vec::with_capacity(cfg.depth);
        let mut dec_merge = Vec::with_capacity(cfg.depth);
        for j in 0..cfg.depth {
            // Decoder step j lifts from the resolution of encoder level
            // depth-1-j to the one above; its skip is that level's input.
            let level = cfg.depth - 1 - j;
            let c_in = cfg.width(level);
            let c_out = if level == 0 { cfg.base_width } else { cfg.width(level - 1) };
            let c_skip = if level == 0 { cfg.in_chans } else { cfg.width(level - 1) };
            dec_up.push(register_conv(
                params,
                rng,
                &format!("{prefix}.dec{j}.up"),
                c_out,
                c_in,
                3,
            ));
            dec_merge.push(register_conv(
                params,
                rng,
                &format!("{prefix}.dec{j}.merge"),
                c_out,
                c_out + c_skip,
                3,
            ));
        }
        let head = register_conv(
            params,
            rng,
            &format!("{prefix}.head"),
            cfg.out_chans,
            cfg.base_width,
            1,
        );
        Ok(UNetRenderer { cfg, enc, dec_up, dec_merge, head })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    fn forward_impl(
        &self,
        tape: &Tape,
        binding: &mut Binding,
        params: &ParamSet,
        input: Var,
        use_skips: bool,
    ) -> Result<Var> {
        let s = tape.shape_of(input)?;
        let div = 1 << self.cfg.depth;
        if s.len() != 4 || s[1] != self.cfg.in_chans {
            return Err(Error::shape(
                "unet",
                format!("expected (n, {}, h, w), got {s:?}", self.cfg.in_chans),
            ));
        }
        if s[2] % div != 0 || s[3] % div != 0 || s[2] < div || s[3] < div {
            return Err(Error::shape(
                "unet",
                format!("spatial extents {}x{} must be divisible by {div}", s[2], s[3]),
            ));
        }
        // Encoder; skips[k] is the input of encoder block k.
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut x = input;
        for k in 0..self.cfg.depth {
            skips.push(x);
            x = conv_layer(tape, binding, params, x, &self.enc[k], 2, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
        // Decoder with per-resolution skip concatenation.
        for j in 0..self.cfg.depth {
            x = tape.upsample2x(x)?;
            x = conv_layer(tape, binding, params, x, &self.dec_up[j], 1, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
            let skip = skips[self.cfg.depth - 1 - j];
            let skip = if use_skips {
                skip
            } else {
                let shape = tape.shape_of(skip)?;
                tape.constant(Tensor::zeros(shape))
            };
            x = tape.concat_chan(x, skip)?;
            x = conv_layer(tape, binding, params, x, &self.dec_merge[j], 1, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
        let logits = conv_layer(tape, binding, params, x, &self.head, 1, 0)?;
        match self.cfg.final_act {
            FinalAct::Tanh => tape.tanh(logits),
            FinalAct::Sigmoid => tape.sigmoid(logits),
        }
    }

    /// Record the forward pass for an (n, in_chans, h, w) batch.
    pub fn forward(
        &self,
        tape: &Tape,
        binding: &mut Binding,
        params: &ParamSet,
        input: Var,
    ) -> Result<Var> {
        self.forward_impl(tape, binding, params, input, true)
    }

    /// Forward pass without recording gradients.
    pub fn render(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let mut binding = Binding::frozen();
        let v = tape.constant(input.clone());
        let out = self.forward(&tape, &mut binding, params, v)?;
        tape.value(out)
    }

    /// Diagnostic forward pass with every skip replaced by zeros, for
    /// checking that the skip connections carry signal.
    pub fn render_without_skips(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let mut binding = Binding::frozen();
        let v = tape.constant(input.clone());
        let out = self.forward_impl(&tape, &mut binding, params, v, false)?;
        tape.value(out)
    }
}

/// Patch critic over channel-concatenated (candidate, conditioning) pairs:
/// `depth` stride-2 blocks then a 3x3 sigmoid head, scoring an
/// (R/2^depth) x (R/2^depth) grid of overlapping patches.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    in_chans: usize,
    depth: usize,
    blocks: Vec<ConvP>,
    head: ConvP,
}

impl PatchDiscriminator {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        prefix: &str,
        in_chans: usize,
        depth: usize,
        base_width: usize,
    ) -> Result<Self> {
        if in_chans == 0 || base_width == 0 || !(1..=5).contains(&depth) {
            return Err(Error::invalid("patch_disc", "bad channel counts or depth"));
        }
        let mut blocks = Vec::with_capacity(depth);
        for k in 0..depth {
            let c_in = if k == 0 { in_chans } else { (base_width << (k - 1)).min(512) };
            blocks.push(register_conv(
                params,
                rng,
                &format!("{prefix}.block{k}"),
                (base_width << k).min(512),
                c_in,
                3,
            ));
        }
        let head = register_conv(
            params,
            rng,
            &format!("{prefix}.head"),
            1,
            (base_width << (depth - 1)).min(512),
            3,
        );
        Ok(PatchDiscriminator { in_chans, depth, blocks, head })
    }

    /// Output grid extent for a given input extent: extent / 2^depth.
    pub fn grid_extent(&self, input_extent: usize) -> usize {
        input_extent >> self.depth
    }

    /// Score an (n, c_img, R, R) candidate against its (n, c_cond, R, R)
    /// conditioning; returns (n, 1, R/2^depth, R/2^depth) sigmoid scores.
    pub fn forward(
        &self,
        tape: &Tape,
        binding: &mut Binding,
        params: &ParamSet,
        candidate: Var,
        conditioning: Var,
    ) -> Result<Var> {
        let mut x = tape.concat_chan(candidate, conditioning)?;
        let s = tape.shape_of(x)?;
        let div = 1 << self.depth;
        if s[1] != self.in_chans {
            return Err(Error::shape(
                "patch_disc",
                format!("candidate + conditioning must give {} channels, got {}", self.in_chans, s[1]),
            ));
        }
        if s[2] % div != 0 || s[3] % div != 0 || s[2] < div || s[3] < div {
            return Err(Error::shape(
                "patch_disc",
                format!("spatial extents {}x{} must be divisible by {div}", s[2], s[3]),
            ));
        }
        for block in &self.blocks {
            x = conv_layer(tape, binding, params, x, block, 2, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
        let logits = conv_layer(tape, binding, params, x, &self.head, 1, 1)?;
        tape.sigmoid(logits)
    }
}

/// One training example: a color image and the sketch it pairs with.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderPair {
    image: Tensor,
    sketch: Tensor,
}

impl RenderPair {
    /// `image` is (3,H,W) in [-1,1]; `sketch` is (1,H,W) valued -1/+1.
    pub fn new(image: Tensor, sketch: Tensor) -> Result<Self> {
        let (is, ss) = (image.shape(), sketch.shape());
        if image.rank() != 3 || is[0] != 3 || sketch.rank() != 3 || ss[0] != 1 {
            return Err(Error::shape(
                "render_pair",
                format!("want image (3,H,W) and sketch (1,H,W), got {is:?} and {ss:?}"),
            ));
        }
        if is[1..] != ss[1..] {
            return Err(Error::shape("render_pair", "image and sketch extents differ"));
        }
        if image.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("render_pair", "image values must lie in [-1,1]"));
        }
        if sketch.data().iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::invalid("render_pair", "sketch values must be -1/+1"));
        }
        Ok(RenderPair { image, sketch })
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn sketch(&self) -> &Tensor {
        &self.sketch
    }
}

/// Stack pairs into (images, sketches) batches.
pub fn batch_pairs(pairs: &[&RenderPair]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = pairs.iter().map(|p| p.image()).collect();
    let sketches: Vec<&Tensor> = pairs.iter().map(|p| p.sketch()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&sketches)?))
}

fn validate_render_batch(images: &Tensor, sketches: &Tensor) -> Result<()> {
    let (is, ss) = (images.shape(), sketches.shape());
    if images.rank() != 4 || is[1] != 3 || sketches.rank() != 4 || ss[1] != 1 {
        return Err(Error::shape(
            "render_step",
            format!("want images (n,3,h,w) and sketches (n,1,h,w), got {is:?} and {ss:?}"),
        ));
    }
    if is[0] != ss[0] || is[2..] != ss[2..] {
        return Err(Error::shape("render_step", "image and sketch batches disagree"));
    }
    // Generated sketches may be continuous, so only the range is checked.
    for (name, t) in [("images", images), ("sketches", sketches)] {
        if t.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("render_step", format!("{name} must lie in [-1,1]")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderLosses {
    /// Discriminator loss: real pairs toward 1, rendered pairs toward 0.
    pub adv_d: f32,
    /// Adversarial part of the generator objective.
    pub adv_g: f32,
    /// Weighted reconstruction term λ · mean |G(y) − x|.
    pub l1: f32,
    /// adv_g + l1.
    pub total_g: f32,
}

/// Both sides' losses on a fixed batch, with no update.
pub fn evaluate_render_losses(
    gp: &UNetRenderer,
    dp: &PatchDiscriminator,
    params_g: &ParamSet,
    params_d: &ParamSet,
    images: &Tensor,
    sketches: &Tensor,
    lambda: f32,
) -> Result<RenderLosses> {
    if lambda < 0.0 {
        return Err(Error::invalid("render_losses", "lambda must be nonnegative"));
    }
    validate_render_batch(images, sketches)?;
    let tape = Tape::new();
    let mut binding = Binding::frozen();
    let y = tape.constant(sketches.clone());
    let x = tape.constant(images.clone());
    let fake = gp.forward(&tape, &mut binding, params_g, y)?;
    let s_fake = dp.forward(&tape, &mut binding, params_d, fake, y)?;
    let s_real = dp.forward(&tape, &mut binding, params_d, x, y)?;
    let adv_d = tape.item(tape.add(
        bce_against_ones(&tape, s_real)?,
        bce_against_zeros(&tape, s_fake)?,
    )?)?;
    let adv_g = tape.item(bce_against_ones(&tape, s_fake)?)?;
    let l1 = lambda * tape.item(l1_mean(&tape, fake, x)?)?;
    Ok(RenderLosses { adv_d, adv_g, l1, total_g: adv_g + l1 })
}

/// One discriminator update on a batch; returns its loss.
pub fn render_disc_step(
    gp: &UNetRenderer,
    dp: &PatchDiscriminator,
    params_g: &ParamSet,
    params_d: &mut ParamSet,
    opt_d: &mut AdamState,
    images: &Tensor,
    sketches: &Tensor,
) -> Result<f32> {
    validate_render_batch(images, sketches)?;
    let tape = Tape::new();
    let mut bind_g = Binding::frozen();
    let mut bind_d = Binding::trainable();
    let y = tape.constant(sketches.clone());
    let x = tape.constant(images.clone());
    let fake = gp.forward(&tape, &mut bind_g, params_g, y)?;
    let s_fake = dp.forward(&tape, &mut bind_d, params_d, fake, y)?;
    let s_real = dp.forward(&tape, &mut bind_d, params_d, x, y)?;
    let loss = tape.add(
        bce_against_ones(&tape, s_real)?,
        bce_against_zeros(&tape, s_fake)?,
    )?;
    tape.backward(loss)?;
    opt_d.step(params_d, &tape, &bind_d)?;
    tape.item(loss)
}

/// One generator update on the adversarial + weighted-L1 objective;
/// returns (adv_g, l1, total).
pub fn render_gen_step(
    gp: &UNetRenderer,
    dp: &PatchDiscriminator,
    params_g: &mut ParamSet,
    params_d: &ParamSet,
    opt_g: &mut AdamState,
    images: &Tensor,
    sketches: &Tensor,
    lambda: f32,
) -> Result<(f32, f32, f32)> {
    if lambda < 0.0 {
        return Err(Error::invalid("render_step", "lambda must be nonnegative"));
    }
    validate_render_batch(images, sketches)?;
    let tape = Tape::new();
    let mut bind_g = Binding::trainable();
    let mut bind_d = Binding::frozen();
    let y = tape.constant(sketches.clone());
    let x = tape.constant(images.clone());
    let fake = gp.forward(&tape, &mut bind_g, params_g, y)?;
    let s_fake = dp.forward(&tape, &mut bind_d, params_d, fake, y)?;
    let adv = bce_against_ones(&tape, s_fake)?;
    let l1 = tape.scale(l1_mean(&tape, fake, x)?, lambda)?;
    let total = tape.add(adv, l1)?;
    tape.backward(total)?;
    opt_g.step(params_g, &tape, &bind_g)?;
    Ok((tape.item(adv)?, tape.item(l1)?, tape.item(total)?))
}

/// One full conditional-GAN step: discriminator update, then generator
/// update, on the same batch.
pub fn render_train_step(
    gp: &UNetRenderer,
    dp: &PatchDiscriminator,
    params_g: &mut ParamSet,
    params_d: &mut ParamSet,
    opt_g: &mut AdamState,
    opt_d: &mut AdamState,
    images: &Tensor,
    sketches: &Tensor,
    lambda: f32,
) -> Result<RenderLosses> {
    let adv_d = render_disc_step(gp, dp, params_g, params_d, opt_d, images, sketches)?;
    let (adv_g, l1, total_g) =
        render_gen_step(gp, dp, params_g, params_d, opt_g, images, sketches, lambda)?;
    Ok(RenderLosses { adv_d, adv_g, l1, total_g })
}
