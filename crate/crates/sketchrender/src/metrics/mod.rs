//! Image-quality metrics for generated-image sets.
//!
//! Three complementary views of sample quality, plus a downstream check:
//!
//! * [`ms_ssim`] — multi-scale structural similarity between two images;
//!   averaged over random generated-generated pairs it measures diversity
//!   (lower = more diverse), over generated-real pairs, fidelity.
//! * [`swd`] — sliced Wasserstein distance between patch distributions of
//!   Laplacian-pyramid levels; sensitive to texture mismatch per scale.
//! * [`frechet_distance`] — distance between Gaussian fits of pooled
//!   feature activations from a fixed random-convolution extractor.
//! * [`seg_confusion`] / [`auc`] — segmentation scores used to compare
//!   training with and without synthetic pretraining.
//!
//! [`evaluate`] runs the full protocol on two image sets and produces a
//! [`MetricReport`] that serializes losslessly to text.

mod features;
mod frechet;
mod ms_ssim;
mod report;
mod seg;
mod swd;

pub use features::{feature_stats, FeatureExtractor};
pub use frechet::{frechet_distance, symmetric_eigen};
pub use ms_ssim::{ms_ssim, MsSsimParams};
pub use report::{evaluate, EvalConfig, MetricReport, SegSummary};
pub use seg::{auc, seg_confusion, SegScores};
pub use swd::{sliced_distance, swd, SwdParams, SwdResult};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image_set(seed: u64, n: usize, res: usize, bias: f32) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data: Vec<f32> = (0..res * res)
                    .map(|_| (rng.gen::<f32>() * 0.5 + bias).clamp(0.0, 1.0))
                    .collect();
                Tensor::new([res, res], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn evaluate_produces_a_valid_round_trippable_report() {
        let real = image_set(1, 4, 32, 0.4);
        let fake = image_set(2, 4, 32, 0.1);
        let cfg = EvalConfig {
            seed: 9,
            pairs: 6,
            swd: SwdParams {
                min_res: 16,
                patch: 7,
                patches_per_image: 16,
                projections: 32,
                seed: 9,
            },
            ms_ssim: None,
        };
        let extractor = FeatureExtractor::default_randconv();
        let report = evaluate("real", &real, "fake", &fake, &extractor, &cfg).unwrap();
        assert!(report.validate().is_ok());
        assert!(report.ms_ssim_fake_mean > 0.0 && report.ms_ssim_fake_mean <= 1.0);
        assert_eq!(report.swd_levels.len(), 2); // 32 and 16
        assert!(report.frechet > 0.0);
        let back = MetricReport::parse(&report.render()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn evaluate_rejects_tiny_sets() {
        let set = image_set(3, 1, 32, 0.3);
        let extractor = FeatureExtractor::default_randconv();
        let err = evaluate(
            "a",
            &set,
            "b",
            &set,
            &extractor,
            &EvalConfig::default(),
        );
        assert!(err.is_err());
    }
}
