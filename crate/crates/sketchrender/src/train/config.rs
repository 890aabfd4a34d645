//! Line-oriented `key = value` training configuration with a lossless
//! serialize/parse round trip.

use crate::error::{Error, Result};
use crate::sketch::SketchParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data_dir: String,
    pub out_dir: String,
    /// Final synthesis resolution; a power of two between 4 and 512.
    pub working_resolution: usize,
    pub batch: usize,
    pub latent_dim: usize,
    /// Real-image budget per progressive level.
    pub images_per_level: usize,
    /// Fraction of each level's budget spent fading the level in.
    pub fade_fraction: f32,
    /// Renderer-stage step count.
    pub render_steps: usize,
    pub lr_sketch_gen: f32,
    pub lr_sketch_disc: f32,
    pub lr_render_gen: f32,
    pub lr_render_disc: f32,
    /// Weight of the reconstruction term in the renderer objective.
    pub lambda: f32,
    pub seed: u64,
    /// Learn the latent code vector instead of fixing it to ones.
    pub trainable_latent: bool,
    /// Interleave the two stages instead of running them sequentially.
    pub joint_stages: bool,
    pub sketch: SketchParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_dir: "data".into(),
            out_dir: "out".into(),
            working_resolution: 64,
            batch: 4,
            latent_dim: 64,
            images_per_level: 512,
            fade_fraction: 0.5,
            render_steps: 300,
            lr_sketch_gen: 0.001,
            lr_sketch_disc: 0.001,
            lr_render_gen: 0.0002,
            lr_render_disc: 0.0002,
            lambda: 100.0,
            seed: 0,
            trainable_latent: false,
            joint_stages: false,
            sketch: SketchParams::default(),
        }
    }
}

impl TrainConfig {
    /// Progressive level count implied by the working resolution.
    pub fn levels(&self) -> usize {
        self.working_resolution.trailing_zeros() as usize - 1
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.working_resolution;
        if !r.is_power_of_two() || !(4..=512).contains(&r) {
            return Err(Error::Config(format!(
                "working_resolution {r} must be a power of two in 4..=512"
            )));
        }
        if self.data_dir.is_empty() || self.out_dir.is_empty() {
            return Err(Error::Config("data_dir and out_dir must be set".into()));
        }
        if self.batch == 0 || self.latent_dim == 0 || self.images_per_level == 0 {
            return Err(Error::Config(
                "batch, latent_dim and images_per_level must be positive".into(),
            ));
        }
        if !(self.fade_fraction > 0.0 && self.fade_fraction < 1.0) {
            return Err(Error::Config("fade_fraction must lie in (0,1)".into()));
        }
        for (name, lr) in [
            ("lr_sketch_gen", self.lr_sketch_gen),
            ("lr_sketch_disc", self.lr_sketch_disc),
            ("lr_render_gen", self.lr_render_gen),
            ("lr_render_disc", self.lr_render_disc),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        self.sketch.validate()?;
        Ok(())
    }

    /// Render as `key = value` lines in a fixed order; `parse` inverts
    /// this exactly, and serializing again is byte-identical.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("data_dir", self.data_dir.clone());
        kv("out_dir", self.out_dir.clone());
        kv("working_resolution", self.working_resolution.to_string());
        kv("batch", self.batch.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("images_per_level", self.images_per_level.to_string());
        kv("fade_fraction", self.fade_fraction.to_string());
        kv("render_steps", self.render_steps.to_string());
        kv("lr_sketch_gen", self.lr_sketch_gen.to_string());
        kv("lr_sketch_disc", self.lr_sketch_disc.to_string());
        kv("lr_render_gen", self.lr_render_gen.to_string());
        kv("lr_render_disc", self.lr_render_disc.to_string());
        kv("lambda", self.lambda.to_string());
        kv("seed", self.seed.to_string());
        kv("trainable_latent", self.trainable_latent.to_string());
        kv("joint_stages", self.joint_stages.to_string());
        kv("sketch_sigma", self.sketch.sigma.to_string());
        kv("sketch_ksize", self.sketch.ksize.to_string());
        kv("sketch_thresh", self.sketch.thresh.to_string());
        kv("sketch_radius", self.sketch.radius.to_string());
        out
    }

    /// Parse `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key {key}", lineno + 1)));
            }
            seen.push(key.to_string());
            let bad = |k: &str, v: &str| Error::Config(format!("bad value for {k}: {v}"));
            match key {
                "data_dir" => cfg.data_dir = value.to_string(),
                "out_dir" => cfg.out_dir = value.to_string(),
                "working_resolution" => {
                    cfg.working_resolution = value.parse().map_err(|_| bad(key, value))?
                }
                "batch" => cfg.batch = value.parse().map_err(|_| bad(key, value))?,
                "latent_dim" => cfg.latent_dim = value.parse().map_err(|_| bad(key, value))?,
                "images_per_level" => {
                    cfg.images_per_level = value.parse().map_err(|_| bad(key, value))?
                }
                "fade_fraction" => cfg.fade_fraction = value.parse().map_err(|_| bad(key, value))?,
                "render_steps" => cfg.render_steps = value.parse().map_err(|_| bad(key, value))?,
                "lr_sketch_gen" => cfg.lr_sketch_gen = value.parse().map_err(|_| bad(key, value))?,
                "lr_sketch_disc" => {
                    cfg.lr_sketch_disc = value.parse().map_err(|_| bad(key, value))?
                }
                "lr_render_gen" => cfg.lr_render_gen = value.parse().map_err(|_| bad(key, value))?,
                "lr_render_disc" => {
                    cfg.lr_render_disc = value.parse().map_err(|_| bad(key, value))?
                }
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad(key, value))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
                "trainable_latent" => {
                    cfg.trainable_latent = value.parse().map_err(|_| bad(key, value))?
                }
                "joint_stages" => cfg.joint_stages = value.parse().map_err(|_| bad(key, value))?,
                "sketch_sigma" => cfg.sketch.sigma = value.parse().map_err(|_| bad(key, value))?,
                "sketch_ksize" => cfg.sketch.ksize = value.parse().map_err(|_| bad(key, value))?,
                "sketch_thresh" => cfg.sketch.thresh = value.parse().map_err(|_| bad(key, value))?,
                "sketch_radius" => cfg.sketch.radius = value.parse().map_err(|_| bad(key, value))?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
