//! Segmentation pretraining benchmark: fine-tune a small U-Net segmenter
//! on a handful of labeled images, once from scratch and once after
//! pretraining on synthesized (image, sketch) pairs, and score both arms
//! on held-out data. The arms share their weight init and fine-tuning
//! randomness, so disabling pretraining makes them bit-identical.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{auc, seg_confusion, SegSummary};
use crate::render::{FinalAct, UNetConfig, UNetRenderer};
use crate::tensor::{AdamState, Binding, ParamSet, Tape, Tensor, Var};

use crate::data::ImageDataset;

/// A (3,H,W) image in [-1,1] with its {0,1} (H,W) label plane.
pub type LabeledPair = (Tensor, Tensor);

#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub seed: u64,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub depth: usize,
    pub base_width: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            seed: 0,
            pretrain_steps: 60,
            finetune_steps: 40,
            batch: 4,
            lr: 0.001,
            depth: 3,
            base_width: 8,
        }
    }
}

impl PretrainOptions {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.finetune_steps == 0 {
            return Err(Error::invalid("pretrain", "batch and finetune_steps must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("pretrain", "lr must be positive"));
        }
        Ok(())
    }
}

/// Both arms' held-out scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub scratch: SegSummary,
    pub pretrained: SegSummary,
}

impl PretrainOutcome {
    /// `key = value` rows reporting sensitivity, accuracy and AUC per arm.
    pub fn render(&self) -> String {
        let mut out = String::from("# segmentation pretraining benchmark\n");
        for (arm, s) in [("scratch", &self.scratch), ("pretrained", &self.pretrained)] {
            out.push_str(&format!("{arm}.sen = {}\n", s.sen));
            out.push_str(&format!("{arm}.acc = {}\n", s.acc));
            out.push_str(&format!("{arm}.auc = {}\n", s.auc));
        }
        out
    }
}

/// Pull (image, label) tensors out of a dataset; labels come from the
/// sketch column when `sketch_labels` is set, otherwise the mask column.
pub fn load_labeled(ds: &ImageDataset, sketch_labels: bool) -> Result<Vec<LabeledPair>> {
    let mut out = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let image = ds.load_image(i)?;
        let label = if sketch_labels { ds.load_sketch(i)? } else { ds.load_mask(i)? }
            .ok_or_else(|| {
                Error::invalid("load_labeled", format!("entry {i} has no label image"))
            })?;
        if [image.shape()[1], image.shape()[2]] != label.shape() {
            return Err(Error::shape(
                "load_labeled",
                format!("image {:?} vs label {:?}", image.shape(), label.shape()),
            ));
        }
        out.push((image, label));
    }
    Ok(out)
}

struct Segmenter {
    net: UNetRenderer,
    params: ParamSet,
    opt: AdamState,
}

impl Segmenter {
    fn new(opts: &PretrainOptions) -> Result<Segmenter> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(10);
        let mut params = ParamSet::new();
        let net = UNetRenderer::new(
            &mut params,
            &mut rng,
            "seg",
            UNetConfig {
                in_chans: 3,
                out_chans: 1,
                depth: opts.depth,
                base_width: opts.base_width,
                final_act: FinalAct::Sigmoid,
            },
        )?;
        let opt = AdamState::new(opts.lr, &params);
        Ok(Segmenter { net, params, opt })
    }
}

/// Pixelwise binary cross-entropy of sigmoid scores against a {0,1}
/// target batch.
fn bce_pixels(tape: &Tape, scores: Var, target: &Tensor) -> Result<Var> {
    let t = tape.constant(target.clone());
    let not_t = tape.add_scalar(tape.scale(t, -1.0)?, 1.0)?;
    let not_s = tape.add_scalar(tape.scale(scores, -1.0)?, 1.0)?;
    let hit = tape.mul(t, tape.log(scores)?)?;
    let miss = tape.mul(not_t, tape.log(not_s)?)?;
    tape.scale(tape.mean(tape.add(hit, miss)?)?, -1.0)
}

fn batch_of(pairs: &[LabeledPair], indices: &[usize]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = indices.iter().map(|&i| &pairs[i].0).collect();
    let planes: Vec<Tensor> = indices
        .iter()
        .map(|&i| {
            let m = &pairs[i].1;
            Tensor::new(vec![1, m.shape()[0], m.shape()[1]], m.data().to_vec())
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = planes.iter().collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&refs)?))
}

fn train_steps(
    seg: &mut Segmenter,
    pairs: &[LabeledPair],
    steps: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for _ in 0..steps {
        let indices: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..pairs.len())).collect();
        let (images, targets) = batch_of(pairs, &indices)?;
        let tape = Tape::new();
        let mut binding = Binding::trainable();
        let input = tape.constant(images);
        let scores = seg.net.forward(&tape, &mut binding, &seg.params, input)?;
        let loss = bce_pixels(&tape, scores, &targets)?;
        tape.backward(loss)?;
        seg.opt.step(&mut seg.params, &tape, &binding)?;
    }
    Ok(())
}

/// Pool every test pixel and score the segmenter: sensitivity and
/// accuracy at threshold 0.5, plus the ranking AUC of the raw scores.
fn evaluate(seg: &Segmenter, test: &[LabeledPair]) -> Result<SegSummary> {
    let mut scores = Vec::new();
    let mut gt = Vec::new();
    for (image, label) in test {
        let s = seg.net.render(&seg.params, &Tensor::stack(&[image])?)?;
        scores.extend_from_slice(s.data());
        gt.extend_from_slice(label.data());
    }
    let scores_t = Tensor::new(vec![scores.len()], scores.clone())?;
    let gt_t = Tensor::new(vec![gt.len()], gt)?;
    let preds = Tensor::new(
        vec![scores.len()],
        scores.iter().map(|&s| f32::from(s > 0.5)).collect(),
    )?;
    let confusion = seg_confusion(&preds, &gt_t)?;
    let sen = confusion
        .sen
        .ok_or_else(|| Error::invalid("pretrain", "test set has no positive pixels"))?;
    Ok(SegSummary { sen, acc: confusion.acc, auc: auc(&scores_t, &gt_t)? })
}

fn run_arm(
    synthetic: &[LabeledPair],
    pretrain_steps: usize,
    train: &[LabeledPair],
    test: &[LabeledPair],
    opts: &PretrainOptions,
) -> Result<SegSummary> {
    let mut seg = Segmenter::new(opts)?;
    let mut pre_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    pre_rng.set_stream(11);
    let mut ft_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    ft_rng.set_stream(12);
    if pretrain_steps > 0 {
        train_steps(&mut seg, synthetic, pretrain_steps, opts.batch, &mut pre_rng)?;
    }
    train_steps(&mut seg, train, opts.finetune_steps, opts.batch, &mut ft_rng)?;
    evaluate(&seg, test)
}

/// Run both arms. The scratch arm skips pretraining; everything else —
/// weight init, fine-tuning batches, evaluation — is identical.
pub fn augmentation_pretrain(
    synthetic: &[LabeledPair],
    train: &[LabeledPair],
    test: &[LabeledPair],
    opts: &PretrainOptions,
) -> Result<PretrainOutcome> {
    opts.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("pretrain", "train and test sets must be non-empty"));
    }
    if synthetic.is_empty() && opts.pretrain_steps > 0 {
        return Err(Error::invalid("pretrain", "pretraining needs synthetic pairs"));
    }
    let scratch = run_arm(synthetic, 0, train, test, opts)?;
    let pretrained = run_arm(synthetic, opts.pretrain_steps, train, test, opts)?;
    Ok(PretrainOutcome { scratch, pretrained })
}
