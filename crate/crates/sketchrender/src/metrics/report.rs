//! Evaluation driver and the report it produces.
//!
//! A [`MetricReport`] renders to text twice over: `#`-prefixed lines for
//! people, `key = value` lines for machines. Floating-point values are
//! printed with Rust's shortest round-trippable formatting, so
//! render → parse → render is byte-identical.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::features::{feature_stats, FeatureExtractor};
use crate::metrics::frechet::frechet_distance;
use crate::metrics::ms_ssim::{ms_ssim, MsSsimParams};
use crate::metrics::swd::{swd, SwdParams};
use crate::tensor::Tensor;

/// Segmentation-benchmark rows, present only when a segmentation run was
/// attached to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSummary {
    pub sen: f64,
    pub acc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub real_id: String,
    pub fake_id: String,
    pub extractor: String,
    /// MS-SSIM over random generated-generated pairs (diversity proxy).
    pub ms_ssim_fake_mean: f64,
    pub ms_ssim_fake_sd: f64,
    /// MS-SSIM over random generated-real pairs.
    pub ms_ssim_cross_mean: f64,
    pub ms_ssim_cross_sd: f64,
    pub swd_levels: Vec<(usize, f64)>,
    pub swd_mean: f64,
    pub frechet: f64,
    pub seg: Option<SegSummary>,
    /// Echo of the evaluation configuration, in order.
    pub config: Vec<(String, String)>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.ms_ssim_fake_mean,
            self.ms_ssim_fake_sd,
            self.ms_ssim_cross_mean,
            self.ms_ssim_cross_sd,
            self.swd_mean,
            self.frechet,
        ];
        for v in finite.iter().chain(self.swd_levels.iter().map(|(_, v)| v)) {
            if !v.is_finite() {
                return Err(Error::Report("non-finite metric value".into()));
            }
        }
        if self.swd_mean < 0.0 || self.frechet < 0.0 {
            return Err(Error::Report("SWD and Fréchet must be nonnegative".into()));
        }
        if let Some(seg) = &self.seg {
            for v in [seg.sen, seg.acc, seg.auc] {
                if !v.is_finite() {
                    return Err(Error::Report("non-finite segmentation value".into()));
                }
            }
        }
        Ok(())
    }

    /// Human-readable summary followed by machine-readable lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# image synthesis evaluation\n");
        out.push_str(&format!("# real set: {}\n", self.real_id));
        out.push_str(&format!("# fake set: {}\n", self.fake_id));
        out.push_str(&format!("# feature extractor: {}\n", self.extractor));
        out.push_str(&format!(
            "# ms-ssim fake-fake: {:.4} +/- {:.4}\n",
            self.ms_ssim_fake_mean, self.ms_ssim_fake_sd
        ));
        out.push_str(&format!(
            "# ms-ssim fake-real: {:.4} +/- {:.4}\n",
            self.ms_ssim_cross_mean, self.ms_ssim_cross_sd
        ));
        for (res, v) in &self.swd_levels {
            out.push_str(&format!("# swd level {res}: {v:.6}\n"));
        }
        out.push_str(&format!("# swd mean: {:.6}\n", self.swd_mean));
        out.push_str(&format!("# frechet ({}): {:.6}\n", self.extractor, self.frechet));
        if let Some(seg) = &self.seg {
            out.push_str(&format!(
                "# segmentation: sen {:.4}, acc {:.4}, auc {:.4}\n",
                seg.sen, seg.acc, seg.auc
            ));
        }
        out.push_str(&format!("real = {}\n", self.real_id));
        out.push_str(&format!("fake = {}\n", self.fake_id));
        out.push_str(&format!("extractor = {}\n", self.extractor));
        out.push_str(&format!("ms_ssim.fake.mean = {}\n", self.ms_ssim_fake_mean));
        out.push_str(&format!("ms_ssim.fake.sd = {}\n", self.ms_ssim_fake_sd));
        out.push_str(&format!("ms_ssim.cross.mean = {}\n", self.ms_ssim_cross_mean));
        out.push_str(&format!("ms_ssim.cross.sd = {}\n", self.ms_ssim_cross_sd));
        for (res, v) in &self.swd_levels {
            out.push_str(&format!("swd.level.{res} = {v}\n"));
        }
        out.push_str(&format!("swd.mean = {}\n", self.swd_mean));
        out.push_str(&format!("frechet = {}\n", self.frechet));
        if let Some(seg) = &self.seg {
            out.push_str(&format!("seg.sen = {}\n", seg.sen));
            out.push_str(&format!("seg.acc = {}\n", seg.acc));
            out.push_str(&format!("seg.auc = {}\n", seg.auc));
        }
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k} = {v}\n"));
        }
        out
    }

    /// Parse the machine-readable lines back into a report.
    pub fn parse(text: &str) -> Result<MetricReport> {
        let mut real_id = None;
        let mut fake_id = None;
        let mut extractor = None;
        let mut fields: Vec<(String, f64)> = Vec::new();
        let mut swd_levels = Vec::new();
        let mut config = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Report(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad_num = |k: &str| Error::Report(format!("bad number for {k}"));
            match key {
                "real" => real_id = Some(value.to_string()),
                "fake" => fake_id = Some(value.to_string()),
                "extractor" => extractor = Some(value.to_string()),
                _ if key.starts_with("config.") => {
                    config.push((key["config.".len()..].to_string(), value.to_string()));
                }
                _ if key.starts_with("swd.level.") => {
                    let res: usize = key["swd.level.".len()..]
                        .parse()
                        .map_err(|_| Error::Report(format!("bad level in {key}")))?;
                    let v: f64 = value.parse().map_err(|_| bad_num(key))?;
                    swd_levels.push((res, v));
                }
                _ => {
                    let v: f64 = value.parse().map_err(|_| bad_num(key))?;
                    fields.push((key.to_string(), v));
                }
            }
        }
        let has_seg = fields.iter().any(|(k, _)| k.starts_with("seg."));
        let mut take = |name: &str| -> Result<f64> {
            let pos = fields
                .iter()
                .position(|(k, _)| k == name)
                .ok_or_else(|| Error::Report(format!("missing field {name}")))?;
            Ok(fields.remove(pos).1)
        };
        let report = MetricReport {
            real_id: real_id.ok_or_else(|| Error::Report("missing field real".into()))?,
            fake_id: fake_id.ok_or_else(|| Error::Report("missing field fake".into()))?,
            extractor: extractor
                .ok_or_else(|| Error::Report("missing field extractor".into()))?,
            ms_ssim_fake_mean: take("ms_ssim.fake.mean")?,
            ms_ssim_fake_sd: take("ms_ssim.fake.sd")?,
            ms_ssim_cross_mean: take("ms_ssim.cross.mean")?,
            ms_ssim_cross_sd: take("ms_ssim.cross.sd")?,
            swd_levels,
            swd_mean: take("swd.mean")?,
            frechet: take("frechet")?,
            seg: if has_seg {
                Some(SegSummary {
                    sen: take("seg.sen")?,
                    acc: take("seg.acc")?,
                    auc: take("seg.auc")?,
                })
            } else {
                None
            },
            config,
        };
        if let Some((k, _)) = fields.first() {
            return Err(Error::Report(format!("unknown field {k}")));
        }
        Ok(report)
    }
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub seed: u64,
    /// Number of random image pairs for each MS-SSIM aggregate.
    pub pairs: usize,
    pub swd: SwdParams,
    /// `None` derives the scale count from the image resolution.
    pub ms_ssim: Option<MsSsimParams>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            pairs: 50,
            swd: SwdParams::default(),
            ms_ssim: None,
        }
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run the full evaluation protocol on two image sets (values in [0,1]).
/// If the sets differ in size, SWD sees both truncated to the smaller
/// count; the MS-SSIM pair samples and feature statistics use everything.
pub fn evaluate(
    real_id: &str,
    real: &[Tensor],
    fake_id: &str,
    fake: &[Tensor],
    extractor: &FeatureExtractor,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::invalid(
            "evaluate",
            "need at least two images per set",
        ));
    }
    let extent = {
        let s = fake[0].shape();
        *s.iter().skip(s.len() - 2).min().expect("rank >= 2")
    };
    let ms_params = cfg
        .ms_ssim
        .clone()
        .unwrap_or_else(|| MsSsimParams::for_resolution(extent));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fake_scores = Vec::with_capacity(cfg.pairs);
    let mut cross_scores = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let i = rng.gen_range(0..fake.len());
        let mut j = rng.gen_range(0..fake.len() - 1);
        if j >= i {
            j += 1;
        }
        fake_scores.push(ms_ssim(&fake[i], &fake[j], &ms_params)?);
        let k = rng.gen_range(0..real.len());
        cross_scores.push(ms_ssim(&fake[i], &real[k], &ms_params)?);
    }
    let (ms_fake_mean, ms_fake_sd) = mean_sd(&fake_scores);
    let (ms_cross_mean, ms_cross_sd) = mean_sd(&cross_scores);

    let n = real.len().min(fake.len());
    let swd_result = swd(&real[..n], &fake[..n], &cfg.swd)?;

    let (mu_r, cov_r) = feature_stats(real, extractor)?;
    let (mu_f, cov_f) = feature_stats(fake, extractor)?;
    let fd = frechet_distance(&mu_r, &cov_r, &mu_f, &cov_f)?;

    let report = MetricReport {
        real_id: real_id.to_string(),
        fake_id: fake_id.to_string(),
        extractor: extractor.name().to_string(),
        ms_ssim_fake_mean: ms_fake_mean,
        ms_ssim_fake_sd: ms_fake_sd,
        ms_ssim_cross_mean: ms_cross_mean,
        ms_ssim_cross_sd: ms_cross_sd,
        swd_levels: swd_result.levels,
        swd_mean: swd_result.mean,
        frechet: fd,
        seg: None,
        config: vec![
            ("seed".into(), cfg.seed.to_string()),
            ("pairs".into(), cfg.pairs.to_string()),
            ("swd.patch".into(), cfg.swd.patch.to_string()),
            (
                "swd.patches_per_image".into(),
                cfg.swd.patches_per_image.to_string(),
            ),
            ("swd.projections".into(), cfg.swd.projections.to_string()),
            ("swd.min_res".into(), cfg.swd.min_res.to_string()),
            ("ms_ssim.scales".into(), ms_params.scales.to_string()),
        ],
    };
    report.validate()?;
    Ok(report)
}
