//! Two-stage training orchestrator: a progressive sketch GAN followed by
//! the sketch-conditioned color renderer.
//!
//! The four networks own disjoint parameter sets, so the combined
//! objective splits into independent min-max problems; the stages run
//! sequentially by default, with interleaved updates available behind
//! `joint_stages` (the order of updates across stages does not couple
//! them). Every random choice after construction flows through a single
//! counter-based RNG, and all mutable state lives in named checkpoint
//! records, which makes an interrupted run bit-identical to an
//! uninterrupted one after resume.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    downsample_binary, save_binary_png, save_color_png, write_manifest, DatasetEntry,
    ImageDataset,
};
use crate::error::{Error, Result};
use crate::progressive::{
    grow, latent_batch, sketch_gan_step, GanLosses, ResolutionSchedule, SketchDiscriminator,
    SketchGenerator,
};
use crate::render::{
    render_train_step, FinalAct, PatchDiscriminator, RenderLosses, UNetConfig, UNetRenderer,
};
use crate::sketch::extract_sketch;
use crate::tensor::{AdamState, ParamSet, Tensor};

use super::checkpoint::{
    expect_f32, expect_u32, expect_u8, find, join_u128, join_u64, read_checkpoint, split_u128,
    split_u64, write_checkpoint, ArrayRecord,
};
use super::config::TrainConfig;

/// U-Net encoder depth that still divides the working resolution.
fn render_depth(resolution: usize) -> usize {
    (resolution.trailing_zeros() as usize).min(4)
}

/// Patch-discriminator depth; its receptive field stays below the image.
fn patch_depth(resolution: usize) -> usize {
    (resolution.trailing_zeros() as usize - 1).clamp(1, 3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sketch,
    Render,
    Done,
}

impl Stage {
    fn as_u32(self) -> u32 {
        match self {
            Stage::Sketch => 0,
            Stage::Render => 1,
            Stage::Done => 2,
        }
    }

    fn from_u32(v: u32) -> Result<Stage> {
        match v {
            0 => Ok(Stage::Sketch),
            1 => Ok(Stage::Render),
            2 => Ok(Stage::Done),
            _ => Err(Error::Checkpoint(format!("unknown stage {v}"))),
        }
    }
}

/// Training corpus in tensor form: color images, their extracted
/// sketches, and the sketch pyramid for every progressive level.
pub struct TrainData {
    /// (3, R, R) images in [-1, 1].
    pub images: Vec<Tensor>,
    /// (1, R, R) extracted sketches in -1/+1.
    pub sketches: Vec<Tensor>,
    /// `pyramid[k-1][i]`: image `i`'s sketch at level k, (1, 2^{k+1}, 2^{k+1}), -1/+1.
    pub pyramid: Vec<Vec<Tensor>>,
}

/// Signed (1, H, W) plane from a two-valued {0,1} (H, W) one.
fn signed_plane(binary: &Tensor) -> Tensor {
    let (h, w) = (binary.shape()[0], binary.shape()[1]);
    let data = binary.data().iter().map(|v| 2.0 * v - 1.0).collect();
    Tensor::new([1, h, w], data).expect("same length")
}

/// Extract sketches from every image and build the per-level pyramid by
/// repeated 2x occupancy downsampling. Purely deterministic.
pub fn prepare_data(cfg: &TrainConfig, dataset: &ImageDataset) -> Result<TrainData> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("prepare_data", "dataset has no entries"));
    }
    if dataset.channels != 3 {
        return Err(Error::invalid("prepare_data", "training expects 3-channel images"));
    }
    if dataset.resolution != cfg.working_resolution {
        return Err(Error::Config(format!(
            "dataset decodes at {} but working_resolution is {}",
            dataset.resolution, cfg.working_resolution
        )));
    }
    let levels = cfg.levels();
    let mut images = Vec::with_capacity(dataset.len());
    let mut sketches = Vec::with_capacity(dataset.len());
    let mut pyramid = vec![Vec::with_capacity(dataset.len()); levels];
    for i in 0..dataset.len() {
        let image = dataset.load_image(i)?;
        let draft = extract_sketch(&image, &cfg.sketch, dataset.entries[i].image.clone())?;
        let mut plane = draft.into_pixels();
        sketches.push(signed_plane(&plane));
        pyramid[levels - 1].push(signed_plane(&plane));
        for k in (1..levels).rev() {
            plane = downsample_binary(&plane)?;
            pyramid[k - 1].push(signed_plane(&plane));
        }
        images.push(image);
    }
    Ok(TrainData { images, sketches, pyramid })
}

/// What a single `tick` did.
#[derive(Debug, Clone, Default)]
pub struct TickOutcome {
    pub gan: Option<GanLosses>,
    pub render: Option<RenderLosses>,
    /// Set when the tick changed phase instead of training.
    pub transition: Option<String>,
}

/// Aggregate of a full run, enough to judge convergence.
#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub sketch_steps: u64,
    pub render_steps: u64,
    pub last_gan: Option<GanLosses>,
    pub first_render: Option<RenderLosses>,
    pub last_render: Option<RenderLosses>,
}

impl TrainSummary {
    pub fn absorb(&mut self, outcome: &TickOutcome) {
        if let Some(g) = outcome.gan {
            self.sketch_steps += 1;
            self.last_gan = Some(g);
        }
        if let Some(r) = outcome.render {
            self.render_steps += 1;
            if self.first_render.is_none() {
                self.first_render = Some(r);
            }
            self.last_render = Some(r);
        }
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    schedule: ResolutionSchedule,
    params_gs: ParamSet,
    params_ds: ParamSet,
    params_gp: ParamSet,
    params_dp: ParamSet,
    gen: SketchGenerator,
    disc: SketchDiscriminator,
    renderer: UNetRenderer,
    patch: PatchDiscriminator,
    opt_gs: AdamState,
    opt_ds: AdamState,
    opt_gp: AdamState,
    opt_dp: AdamState,
    rng: ChaCha8Rng,
    stage: Stage,
    seen_in_level: u64,
    render_step: u64,
}

impl Trainer {
    /// Build all four networks. Weight init draws from seed stream 1,
    /// training randomness from stream 2.
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let schedule = ResolutionSchedule::for_resolution(
            cfg.working_resolution,
            cfg.images_per_level,
            cfg.fade_fraction,
        )?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);

        let mut params_gs = ParamSet::new();
        let gen = SketchGenerator::new(
            &mut params_gs,
            &mut init_rng,
            cfg.latent_dim,
            schedule.levels,
            cfg.trainable_latent,
        )?;
        let mut params_ds = ParamSet::new();
        let disc = SketchDiscriminator::new(&mut params_ds, &mut init_rng, schedule.levels)?;
        let mut params_gp = ParamSet::new();
        let renderer = UNetRenderer::new(
            &mut params_gp,
            &mut init_rng,
            "gp",
            UNetConfig {
                in_chans: 1,
                out_chans: 3,
                depth: render_depth(cfg.working_resolution),
                base_width: 32,
                final_act: FinalAct::Tanh,
            },
        )?;
        let mut params_dp = ParamSet::new();
        let patch = PatchDiscriminator::new(
            &mut params_dp,
            &mut init_rng,
            "dp",
            4,
            patch_depth(cfg.working_resolution),
            32,
        )?;

        let opt_gs = AdamState::new(cfg.lr_sketch_gen, &params_gs);
        let opt_ds = AdamState::new(cfg.lr_sketch_disc, &params_ds);
        let opt_gp = AdamState::new(cfg.lr_render_gen, &params_gp);
        let opt_dp = AdamState::new(cfg.lr_render_disc, &params_dp);

        Ok(Trainer {
            cfg,
            schedule,
            params_gs,
            params_ds,
            params_gp,
            params_dp,
            gen,
            disc,
            renderer,
            patch,
            opt_gs,
            opt_ds,
            opt_gp,
            opt_dp,
            rng,
            stage: Stage::Sketch,
            seen_in_level: 0,
            render_step: 0,
        })
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn level(&self) -> usize {
        self.gen.level()
    }

    pub fn alpha(&self) -> f32 {
        self.gen.alpha()
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    pub fn sketch_params(&self) -> (&SketchGenerator, &ParamSet) {
        (&self.gen, &self.params_gs)
    }

    pub fn render_params(&self) -> (&UNetRenderer, &ParamSet) {
        (&self.renderer, &self.params_gp)
    }

    /// Uniform batch indices with replacement; the only consumer of the
    /// training RNG besides latent draws inside the GAN steps.
    fn sample_indices(&mut self, n_items: usize) -> Vec<usize> {
        (0..self.cfg.batch).map(|_| self.rng.gen_range(0..n_items)).collect()
    }

    fn stack_batch(items: &[Tensor], indices: &[usize]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = indices.iter().map(|&i| &items[i]).collect();
        Tensor::stack(&refs)
    }

    fn sketch_tick(&mut self, data: &TrainData) -> Result<TickOutcome> {
        if self.seen_in_level >= self.cfg.images_per_level as u64 {
            let note = if self.gen.level() < self.schedule.levels {
                self.gen.set_alpha(1.0)?;
                self.disc.set_alpha(1.0)?;
                grow(&mut self.gen, &mut self.disc)?;
                self.seen_in_level = 0;
                format!(
                    "grew to level {} ({}x{})",
                    self.gen.level(),
                    self.schedule.resolution(self.gen.level()),
                    self.schedule.resolution(self.gen.level())
                )
            } else {
                self.gen.set_alpha(1.0)?;
                self.disc.set_alpha(1.0)?;
                self.stage = Stage::Render;
                "sketch stage complete".to_string()
            };
            return Ok(TickOutcome { transition: Some(note), ..TickOutcome::default() });
        }
        let level = self.gen.level();
        let alpha = self.schedule.alpha_for(level, self.seen_in_level as usize);
        self.gen.set_alpha(alpha)?;
        self.disc.set_alpha(alpha)?;
        let pool = &data.pyramid[level - 1];
        let indices = self.sample_indices(pool.len());
        let real = Self::stack_batch(pool, &indices)?;
        let gan = sketch_gan_step(
            &self.gen,
            &self.disc,
            &mut self.params_gs,
            &mut self.params_ds,
            &mut self.opt_gs,
            &mut self.opt_ds,
            &real,
            &mut self.rng,
        )?;
        self.seen_in_level += indices.len() as u64;
        Ok(TickOutcome { gan: Some(gan), ..TickOutcome::default() })
    }

    fn render_micro_step(&mut self, data: &TrainData) -> Result<RenderLosses> {
        let indices = self.sample_indices(data.images.len());
        let images = Self::stack_batch(&data.images, &indices)?;
        let sketches = Self::stack_batch(&data.sketches, &indices)?;
        let losses = render_train_step(
            &self.renderer,
            &self.patch,
            &mut self.params_gp,
            &mut self.params_dp,
            &mut self.opt_gp,
            &mut self.opt_dp,
            &images,
            &sketches,
            self.cfg.lambda,
        )?;
        self.render_step += 1;
        Ok(losses)
    }

    fn render_tick(&mut self, data: &TrainData) -> Result<TickOutcome> {
        if self.render_step >= self.cfg.render_steps as u64 {
            self.stage = Stage::Done;
            return Ok(TickOutcome {
                transition: Some("render stage complete".to_string()),
                ..TickOutcome::default()
            });
        }
        let losses = self.render_micro_step(data)?;
        Ok(TickOutcome { render: Some(losses), ..TickOutcome::default() })
    }

    /// One unit of work. Sequential mode trains the current stage;
    /// joint mode adds one render step to every productive sketch tick.
    pub fn tick(&mut self, data: &TrainData) -> Result<TickOutcome> {
        match self.stage {
            Stage::Sketch => {
                let mut outcome = self.sketch_tick(data)?;
                if self.cfg.joint_stages
                    && outcome.gan.is_some()
                    && self.render_step < self.cfg.render_steps as u64
                {
                    outcome.render = Some(self.render_micro_step(data)?);
                }
                Ok(outcome)
            }
            Stage::Render => self.render_tick(data),
            Stage::Done => Ok(TickOutcome::default()),
        }
    }

    /// Tick until done; `watch` sees every outcome as it happens.
    pub fn run(
        &mut self,
        data: &TrainData,
        mut watch: impl FnMut(&Trainer, &TickOutcome),
    ) -> Result<TrainSummary> {
        let budget_ticks = self.schedule.levels as u64
            * (self.cfg.images_per_level as u64 / self.cfg.batch as u64 + 2)
            + self.cfg.render_steps as u64
            + 4;
        let mut summary = TrainSummary::default();
        for _ in 0..budget_ticks * 4 {
            if self.is_done() {
                return Ok(summary);
            }
            let outcome = self.tick(data)?;
            summary.absorb(&outcome);
            watch(self, &outcome);
        }
        Err(Error::invalid("train", "run exceeded its tick budget without finishing"))
    }

    /// Draw `n` fresh latents, synthesize sketches, and render them;
    /// returns ((1,R,R) sketch, (3,R,R) image) pairs. Independent of the
    /// training RNG.
    pub fn sample_end_to_end(&self, n: usize, seed: u64) -> Result<Vec<(Tensor, Tensor)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let r = self.schedule.resolution(self.gen.level());
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let z = latent_batch(&mut rng, 1, self.gen.latent_dim());
            let sketch4 = self.gen.synthesize(&self.params_gs, &z)?;
            let sketch = Tensor::new(vec![1, r, r], sketch4.into_data())?;
            let color4 = self.renderer.render(&self.params_gp, &Tensor::stack(&[&sketch])?)?;
            let color = Tensor::new(vec![3, r, r], color4.into_data())?;
            out.push((sketch, color));
        }
        Ok(out)
    }

    /// Serialize everything mutable into named records. The order is
    /// fixed, so saving what `from_records` restored is byte-identical.
    pub fn to_records(&self) -> Result<Vec<ArrayRecord>> {
        let mut recs = vec![
            ArrayRecord::u8("config", self.cfg.serialize().into_bytes()),
            ArrayRecord::u32("progress.stage", vec![self.stage.as_u32()]),
            ArrayRecord::u32("progress.level", vec![self.gen.level() as u32]),
            ArrayRecord::f32("progress.alpha", &[1], vec![self.gen.alpha()]),
            ArrayRecord::u32("progress.seen", split_u64(self.seen_in_level)),
            ArrayRecord::u32("progress.render_step", split_u64(self.render_step)),
            ArrayRecord::u8("rng.train.seed", self.rng.get_seed().to_vec()),
            ArrayRecord::u32("rng.train.stream", split_u64(self.rng.get_stream())),
            ArrayRecord::u32("rng.train.word_pos", split_u128(self.rng.get_word_pos())),
        ];
        let sides = [
            (&self.params_gs, &self.opt_gs, "gs"),
            (&self.params_ds, &self.opt_ds, "ds"),
            (&self.params_gp, &self.opt_gp, "gp"),
            (&self.params_dp, &self.opt_dp, "dp"),
        ];
        for (set, opt, tag) in sides {
            for (name, tensor) in set.iter() {
                recs.push(ArrayRecord::f32(
                    &format!("param.{name}"),
                    tensor.shape(),
                    tensor.data().to_vec(),
                ));
            }
            recs.push(ArrayRecord::u32(&format!("adam.{tag}.t"), split_u64(opt.t())));
            for ((name, _), (m, v)) in set
                .iter()
                .zip(opt.first_moments().iter().zip(opt.second_moments()))
            {
                recs.push(ArrayRecord::f32(&format!("adam.{tag}.m.{name}"), &[m.len()], m.clone()));
                recs.push(ArrayRecord::f32(&format!("adam.{tag}.v.{name}"), &[v.len()], v.clone()));
            }
        }
        Ok(recs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_records()?)
    }

    pub fn from_records(records: &[ArrayRecord]) -> Result<Trainer> {
        let cfg_text = String::from_utf8(expect_u8(find(records, "config")?)?.to_vec())
            .map_err(|_| Error::Checkpoint("config is not utf-8".into()))?;
        let cfg = TrainConfig::parse(&cfg_text)?;
        let mut t = Trainer::new(cfg)?;

        let sides: [(&mut ParamSet, &mut AdamState, f32, &str); 4] = [
            (&mut t.params_gs, &mut t.opt_gs, t.cfg.lr_sketch_gen, "gs"),
            (&mut t.params_ds, &mut t.opt_ds, t.cfg.lr_sketch_disc, "ds"),
            (&mut t.params_gp, &mut t.opt_gp, t.cfg.lr_render_gen, "gp"),
            (&mut t.params_dp, &mut t.opt_dp, t.cfg.lr_render_disc, "dp"),
        ];
        for (set, opt, lr, tag) in sides {
            let ids: Vec<_> = set.ids().collect();
            let mut m = Vec::with_capacity(ids.len());
            let mut v = Vec::with_capacity(ids.len());
            for id in ids {
                let name = set.name(id).to_string();
                let rec = find(records, &format!("param.{name}"))?;
                if rec.shape != set.get(id).shape() {
                    return Err(Error::Checkpoint(format!(
                        "param.{name}: shape {:?} does not match the built network {:?}",
                        rec.shape,
                        set.get(id).shape()
                    )));
                }
                *set.get_mut(id) = Tensor::new(rec.shape.clone(), expect_f32(rec)?.to_vec())?;
                m.push(expect_f32(find(records, &format!("adam.{tag}.m.{name}"))?)?.to_vec());
                v.push(expect_f32(find(records, &format!("adam.{tag}.v.{name}"))?)?.to_vec());
            }
            let steps = join_u64(expect_u32(find(records, &format!("adam.{tag}.t"))?)?)?;
            *opt = AdamState::restore(lr, steps, m, v);
        }

        t.stage = Stage::from_u32(expect_u32(find(records, "progress.stage")?)?[0])?;
        let level = expect_u32(find(records, "progress.level")?)?[0] as usize;
        let alpha = expect_f32(find(records, "progress.alpha")?)?[0];
        t.gen.restore_progress(level, alpha)?;
        t.disc.restore_progress(level, alpha)?;
        t.seen_in_level = join_u64(expect_u32(find(records, "progress.seen")?)?)?;
        t.render_step = join_u64(expect_u32(find(records, "progress.render_step")?)?)?;

        let seed_bytes = expect_u8(find(records, "rng.train.seed")?)?;
        let seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        t.rng = ChaCha8Rng::from_seed(seed);
        t.rng.set_stream(join_u64(expect_u32(find(records, "rng.train.stream")?)?)?);
        t.rng.set_word_pos(join_u128(expect_u32(find(records, "rng.train.word_pos")?)?)?);

        let expected = t.to_records()?.len();
        if records.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} records, expected {expected}",
                records.len()
            )));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Trainer> {
        Trainer::from_records(&read_checkpoint(path)?)
    }
}

/// Extract, train both stages, and return the trainer with a summary.
pub fn full_train(dataset: &ImageDataset, cfg: &TrainConfig) -> Result<(Trainer, TrainSummary)> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let data = prepare_data(cfg, dataset)?;
    let summary = trainer.run(&data, |_, _| {})?;
    Ok((trainer, summary))
}

/// Synthesize `n` (image, sketch) pairs to disk as a loadable dataset:
/// `pair_NNNN.png` color renderings next to `pair_NNNN_sketch.png`
/// two-valued label images, plus a manifest. Deterministic per seed.
pub fn generate_pairs(trainer: &Trainer, n: usize, seed: u64, out: &Path) -> Result<ImageDataset> {
    if trainer.gen.level() < trainer.schedule.levels || trainer.gen.alpha() < 1.0 {
        return Err(Error::invalid(
            "generate_pairs",
            "the sketch generator has not finished its schedule",
        ));
    }
    fs::create_dir_all(out)?;
    let r = trainer.schedule.final_resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let z = latent_batch(&mut rng, 1, trainer.gen.latent_dim());
        let raw = trainer.gen.synthesize(&trainer.params_gs, &z)?;
        // Threshold at 0 to a two-valued sketch, then render from the
        // same signed labels the renderer was trained on.
        let label_data: Vec<f32> = raw.data().iter().map(|&v| f32::from(v > 0.0)).collect();
        let label = Tensor::new(vec![r, r], label_data)?;
        let signed = signed_plane(&label);
        let color4 = trainer.renderer.render(&trainer.params_gp, &Tensor::stack(&[&signed])?)?;
        let color = Tensor::new(vec![3, r, r], color4.into_data())?;
        let image_name = format!("pair_{i:04}.png");
        let sketch_name = format!("pair_{i:04}_sketch.png");
        save_color_png(&out.join(&image_name), &color)?;
        save_binary_png(&out.join(&sketch_name), &label)?;
        entries.push(DatasetEntry { image: image_name, sketch: Some(sketch_name), mask: None });
    }
    write_manifest(out, &entries)?;
    Ok(ImageDataset {
        root: out.to_path_buf(),
        resolution: r,
        channels: 3,
        shuffle_seed: seed,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_toy_corpus;
    use tempfile::tempdir;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            working_resolution: 8,
            batch: 2,
            latent_dim: 8,
            images_per_level: 6,
            fade_fraction: 0.5,
            render_steps: 5,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus(dir: &Path) -> ImageDataset {
        make_toy_corpus(6, 8, 7, dir).unwrap()
    }

    #[test]
    fn full_train_completes_with_finite_losses_and_valid_samples() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg();
        let (trainer, summary) = full_train(&tiny_corpus(dir.path()), &cfg).unwrap();
        assert!(trainer.is_done());
        assert_eq!(trainer.level(), 2);
        // 6 images per level / batch 2 = 3 steps at each of 2 levels.
        assert_eq!(summary.sketch_steps, 6);
        assert_eq!(summary.render_steps, 5);
        let gan = summary.last_gan.unwrap();
        assert!(gan.loss_d.is_finite() && gan.loss_g.is_finite());
        let render = summary.last_render.unwrap();
        assert!(render.total_g.is_finite() && render.l1.is_finite());

        let samples = trainer.sample_end_to_end(2, 5).unwrap();
        assert_eq!(samples.len(), 2);
        for (sketch, color) in &samples {
            assert_eq!(sketch.shape(), [1, 8, 8]);
            assert_eq!(color.shape(), [3, 8, 8]);
            assert!(sketch.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(color.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        // Same seed, same samples.
        let again = trainer.sample_end_to_end(2, 5).unwrap();
        assert_eq!(again[1].1.data(), samples[1].1.data());
    }

    #[test]
    fn identical_configs_train_to_identical_parameters() {
        let dir = tempdir().unwrap();
        let corpus = tiny_corpus(dir.path());
        let cfg = tiny_cfg();
        let (a, _) = full_train(&corpus, &cfg).unwrap();
        let (b, _) = full_train(&corpus, &cfg).unwrap();
        assert_eq!(a.to_records().unwrap(), b.to_records().unwrap());
    }

    #[test]
    fn resume_from_checkpoint_matches_the_uninterrupted_run() {
        let dir = tempdir().unwrap();
        let corpus = tiny_corpus(dir.path());
        let cfg = tiny_cfg();
        let data = prepare_data(&cfg, &corpus).unwrap();

        let mut straight = Trainer::new(cfg.clone()).unwrap();
        straight.run(&data, |_, _| {}).unwrap();

        let mut first = Trainer::new(cfg).unwrap();
        for _ in 0..5 {
            first.tick(&data).unwrap();
        }
        let ckpt = dir.path().join("mid.ckpt");
        first.save(&ckpt).unwrap();
        let mut resumed = Trainer::load(&ckpt).unwrap();
        resumed.run(&data, |_, _| {}).unwrap();

        assert_eq!(resumed.to_records().unwrap(), straight.to_records().unwrap());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let corpus = tiny_corpus(dir.path());
        let cfg = tiny_cfg();
        let data = prepare_data(&cfg, &corpus).unwrap();
        let mut trainer = Trainer::new(cfg).unwrap();
        for _ in 0..4 {
            trainer.tick(&data).unwrap();
        }
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        trainer.save(&a).unwrap();
        Trainer::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn zero_render_steps_leave_the_renderer_untouched() {
        let dir = tempdir().unwrap();
        let corpus = tiny_corpus(dir.path());
        let cfg = TrainConfig { render_steps: 0, ..tiny_cfg() };
        let fresh: Vec<ArrayRecord> = Trainer::new(cfg.clone())
            .unwrap()
            .to_records()
            .unwrap()
            .into_iter()
            .filter(|r| r.name.contains(".gp") || r.name.contains(".dp"))
            .collect();
        let (trainer, summary) = full_train(&corpus, &cfg).unwrap();
        assert!(trainer.is_done());
        assert_eq!(summary.render_steps, 0);
        let after: Vec<ArrayRecord> = trainer
            .to_records()
            .unwrap()
            .into_iter()
            .filter(|r| r.name.contains(".gp") || r.name.contains(".dp"))
            .collect();
        assert_eq!(fresh, after);
    }

    #[test]
    fn joint_mode_finishes_both_stages() {
        let dir = tempdir().unwrap();
        let corpus = tiny_corpus(dir.path());
        let cfg = TrainConfig { joint_stages: true, render_steps: 4, ..tiny_cfg() };
        let (trainer, summary) = full_train(&corpus, &cfg).unwrap();
        assert!(trainer.is_done());
        assert_eq!(summary.sketch_steps, 6);
        assert_eq!(summary.render_steps, 4);
    }

    #[test]
    fn the_four_parameter_sets_have_disjoint_names() {
        let trainer = Trainer::new(tiny_cfg()).unwrap();
        let mut names: Vec<String> = Vec::new();
        for set in [
            &trainer.params_gs,
            &trainer.params_ds,
            &trainer.params_gp,
            &trainer.params_dp,
        ] {
            names.extend(set.iter().map(|(n, _)| n.to_string()));
        }
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total, "a parameter name repeats across networks");
    }

    #[test]
    fn generated_pairs_are_deterministic_loadable_and_two_valued() {
        let dir = tempdir().unwrap();
        let corpus = tiny_corpus(dir.path());
        let cfg = TrainConfig { render_steps: 2, ..tiny_cfg() };
        let (trainer, _) = full_train(&corpus, &cfg).unwrap();

        let out_a = dir.path().join("pairs_a");
        let out_b = dir.path().join("pairs_b");
        let made = generate_pairs(&trainer, 3, 21, &out_a).unwrap();
        generate_pairs(&trainer, 3, 21, &out_b).unwrap();
        assert_eq!(made.len(), 3);
        for entry in &made.entries {
            let a = fs::read(out_a.join(&entry.image)).unwrap();
            let b = fs::read(out_b.join(&entry.image)).unwrap();
            assert_eq!(a, b, "color pngs differ across identical runs");
            let sk = entry.sketch.as_ref().unwrap();
            assert_eq!(fs::read(out_a.join(sk)).unwrap(), fs::read(out_b.join(sk)).unwrap());
            let label = made.load_sketch(0).unwrap().unwrap();
            assert!(label.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }

        // n = 0 still writes a (empty) manifest.
        let empty = generate_pairs(&trainer, 0, 1, &dir.path().join("none")).unwrap();
        assert!(empty.is_empty());
        assert!(dir.path().join("none").join(crate::data::MANIFEST_NAME).exists());
    }

    #[test]
    fn generate_pairs_refuses_an_unfinished_generator() {
        let trainer = Trainer::new(tiny_cfg()).unwrap();
        let dir = tempdir().unwrap();
        assert!(generate_pairs(&trainer, 1, 0, dir.path()).is_err());
    }

    #[test]
    fn prepare_data_rejects_mismatched_inputs() {
        let dir = tempdir().unwrap();
        let mut corpus = tiny_corpus(dir.path());
        let cfg = TrainConfig { working_resolution: 16, ..tiny_cfg() };
        assert!(prepare_data(&cfg, &corpus).is_err(), "resolution mismatch");
        corpus.channels = 1;
        assert!(prepare_data(&tiny_cfg(), &corpus).is_err(), "grayscale corpus");
    }
}
