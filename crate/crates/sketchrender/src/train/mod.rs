//! Training orchestration: configuration, checkpoints, the two-stage
//! trainer, pair synthesis, and the segmentation pretraining benchmark.

mod checkpoint;
mod config;
mod pretrain;
mod stages;

pub use checkpoint::{
    decode, encode, read_checkpoint, write_checkpoint, ArrayRecord, Payload, MAGIC, VERSION,
};
pub use config::TrainConfig;
pub use pretrain::{
    augmentation_pretrain, load_labeled, LabeledPair, PretrainOptions, PretrainOutcome,
};
pub use stages::{
    full_train, generate_pairs, prepare_data, Stage, TickOutcome, TrainData, TrainSummary, Trainer,
};
