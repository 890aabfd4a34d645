//! Command line driver: toy-corpus synthesis, sketch extraction,
//! two-stage training, pair generation, metric evaluation, and the
//! segmentation pretraining benchmark.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sketchrender::data::{load_color_png, load_dataset, make_toy_corpus, save_binary_png};
use sketchrender::metrics::{evaluate, EvalConfig, FeatureExtractor};
use sketchrender::sketch::{extract_sketch, SketchParams};
use sketchrender::train::{
    augmentation_pretrain, generate_pairs, load_labeled, prepare_data, PretrainOptions,
    TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(name = "sketchrender", version, about = "Two-stage sketch-to-image synthesis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a reproducible synthetic corpus of shaded curves with masks.
    MakeToy {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a two-valued sketch from every image in a directory.
    SketchExtract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SketchParams::default().sigma)]
        sigma: f32,
        #[arg(long, default_value_t = SketchParams::default().ksize)]
        ksize: usize,
        #[arg(long, default_value_t = SketchParams::default().thresh)]
        thresh: f32,
        #[arg(long, default_value_t = SketchParams::default().radius)]
        radius: usize,
    },
    /// Train both stages as described by a `key = value` config file.
    Train {
        #[arg(long, required_unless_present = "resume", conflicts_with = "resume")]
        config: Option<PathBuf>,
        /// Continue from a checkpoint instead (its embedded config wins).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample (image, sketch) pairs from a trained checkpoint.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a synthesized image directory against a real one.
    Metrics {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// Report file; the report always prints to stdout too.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resize both sets to this extent (0 keeps native sizes).
        #[arg(long, default_value_t = 0)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare scratch vs pretrained segmentation on labeled data.
    AugmentPretrain {
        /// Directory of synthesized pairs (labels in the sketch column).
        #[arg(long)]
        pairs: PathBuf,
        /// Labeled corpus (labels in the mask column).
        #[arg(long)]
        train: PathBuf,
        /// Held-out labeled corpus; defaults to a split of `--train`.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        hold_out: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = PretrainOptions::default().pretrain_steps)]
        pretrain_steps: usize,
        #[arg(long, default_value_t = PretrainOptions::default().finetune_steps)]
        finetune_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::MakeToy { n, res, seed, out } => {
            let ds = make_toy_corpus(n, res, seed, &out)
                .with_context(|| format!("writing toy corpus to {}", out.display()))?;
            println!("wrote {} images at {res}x{res} to {}", ds.len(), out.display());
        }
        Cmd::SketchExtract { input, out, sigma, ksize, thresh, radius } => {
            let params = SketchParams { sigma, ksize, thresh, radius };
            let n = run_sketch_extract(&input, &out, &params)?;
            println!("extracted {n} sketches to {}", out.display());
        }
        Cmd::Train { config, resume } => run_train(config.as_deref(), resume.as_deref())?,
        Cmd::Generate { ckpt, n, seed, out } => {
            let trainer = Trainer::load(&ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            let ds = generate_pairs(&trainer, n, seed, &out)?;
            println!("generated {} pairs to {}", ds.len(), out.display());
        }
        Cmd::Metrics { real, fake, out, res, seed } => {
            let report = run_metrics(&real, &fake, res, seed)?;
            print!("{report}");
            if let Some(path) = out {
                fs::write(&path, &report)
                    .with_context(|| format!("writing report to {}", path.display()))?;
            }
        }
        Cmd::AugmentPretrain {
            pairs,
            train,
            test,
            hold_out,
            seed,
            pretrain_steps,
            finetune_steps,
            out,
        } => {
            let report = run_augment_pretrain(
                &pairs,
                &train,
                test.as_deref(),
                hold_out,
                PretrainOptions { seed, pretrain_steps, finetune_steps, ..Default::default() },
            )?;
            print!("{report}");
            if let Some(path) = out {
                fs::write(&path, &report)
                    .with_context(|| format!("writing report to {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn run_sketch_extract(input: &Path, out: &Path, params: &SketchParams) -> Result<usize> {
    let ds = load_dataset(input, 0, 3, false)
        .with_context(|| format!("reading images from {}", input.display()))?;
    fs::create_dir_all(out)?;
    let mut manifest = String::new();
    for (i, entry) in ds.entries.iter().enumerate() {
        let image = ds.load_image(i)?;
        let draft = extract_sketch(&image, params, entry.image.clone())
            .with_context(|| format!("extracting {}", entry.image))?;
        let stem = entry.image.strip_suffix(".png").unwrap_or(&entry.image);
        let sketch_name = format!("{stem}_sketch.png");
        save_binary_png(&out.join(&sketch_name), draft.pixels())?;
        manifest.push_str(&format!("{}\t{}\n", entry.image, sketch_name));
    }
    fs::write(out.join("manifest.tsv"), manifest)?;
    Ok(ds.len())
}

fn run_train(config: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let mut trainer = match (config, resume) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            Trainer::new(TrainConfig::parse(&text)?)?
        }
        (None, Some(path)) => Trainer::load(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?,
        _ => bail!("pass exactly one of --config or --resume"),
    };
    let cfg = trainer.cfg().clone();
    let dataset = load_dataset(Path::new(&cfg.data_dir), cfg.working_resolution, 3, false)
        .with_context(|| format!("loading the training corpus from {}", cfg.data_dir))?;
    println!(
        "training on {} images at {r}x{r} across {} levels",
        dataset.len(),
        cfg.levels(),
        r = cfg.working_resolution
    );
    let data = prepare_data(&cfg, &dataset)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.txt"), cfg.serialize())?;
    let ckpt = out_dir.join("checkpoint.ckpt");

    let mut ticks = 0u64;
    let summary = trainer.run(&data, |t, outcome| {
        ticks += 1;
        if let Some(note) = &outcome.transition {
            println!("[{ticks:>6}] {note}");
            let _ = t.save(&ckpt);
        } else if ticks % 50 == 0 {
            if let Some(g) = outcome.gan {
                println!(
                    "[{ticks:>6}] level {} alpha {:.2}  d {:.4}  g {:.4}",
                    t.level(),
                    t.alpha(),
                    g.loss_d,
                    g.loss_g
                );
            }
            if let Some(r) = outcome.render {
                println!(
                    "[{ticks:>6}] render  d {:.4}  adv {:.4}  l1 {:.4}",
                    r.adv_d, r.adv_g, r.l1
                );
            }
        }
    })?;
    trainer.save(&ckpt)?;
    println!(
        "done: {} sketch steps, {} render steps",
        summary.sketch_steps, summary.render_steps
    );
    if let (Some(first), Some(last)) = (summary.first_render, summary.last_render) {
        println!("render l1 {:.4} -> {:.4}", first.l1, last.l1);
    }
    println!("checkpoint at {}", ckpt.display());
    Ok(())
}

fn run_metrics(real: &Path, fake: &Path, res: usize, seed: u64) -> Result<String> {
    let mut sets = Vec::new();
    for dir in [real, fake] {
        let ds = load_dataset(dir, res, 3, false)
            .with_context(|| format!("reading images from {}", dir.display()))?;
        let images = (0..ds.len())
            .map(|i| load_color_png(&ds.root.join(&ds.entries[i].image), res))
            .collect::<sketchrender::Result<Vec<_>>>()?;
        sets.push(images);
    }
    let fake_images = sets.pop().expect("two sets");
    let real_images = sets.pop().expect("two sets");
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned());
    let extractor = FeatureExtractor::default_randconv();
    let report = evaluate(
        &name(real).unwrap_or_else(|| "real".into()),
        &real_images,
        &name(fake).unwrap_or_else(|| "fake".into()),
        &fake_images,
        &extractor,
        &EvalConfig { seed, ..EvalConfig::default() },
    )?;
    Ok(report.render())
}

fn run_augment_pretrain(
    pairs: &Path,
    train: &Path,
    test: Option<&Path>,
    hold_out: usize,
    opts: PretrainOptions,
) -> Result<String> {
    let synthetic_ds = load_dataset(pairs, 0, 3, false)
        .with_context(|| format!("reading synthesized pairs from {}", pairs.display()))?;
    let synthetic = load_labeled(&synthetic_ds, true)?;
    let labeled_ds = load_dataset(train, 0, 3, false)
        .with_context(|| format!("reading the labeled corpus from {}", train.display()))?;
    let (train_set, test_set) = match test {
        Some(dir) => {
            let test_ds = load_dataset(dir, 0, 3, false)
                .with_context(|| format!("reading the test corpus from {}", dir.display()))?;
            (load_labeled(&labeled_ds, false)?, load_labeled(&test_ds, false)?)
        }
        None => {
            let (kept, held) = labeled_ds.split(hold_out, opts.seed)?;
            (load_labeled(&kept, false)?, load_labeled(&held, false)?)
        }
    };
    let outcome = augmentation_pretrain(&synthetic, &train_set, &test_set, &opts)?;
    Ok(outcome.render())
}
