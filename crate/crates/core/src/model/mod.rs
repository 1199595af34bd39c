//! Three-stage backbone with deep-to-shallow attention, per-stream task heads,
//! multi-task training, fine-tuning and checkpoint I/O.

mod checkpoint;
mod config;
mod input;
mod loss;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{BackboneConfig, MscConfig, TaskHead, TaskKind};
pub use input::{augment, image_to_tensor, Augmentation};
pub use loss::{combine_task_losses, msc_loss, stream_loss, weighted_stream_sum, Target};
pub use network::{attention_fuse, han_forward, AttentionWeights, FeaturePyramid, HanWeights, Network, ParamSpec};
pub use train::{
    evaluate_tiles, fine_tune, train, train_network, EpochStats, TileSet, TrainOptions, Trained,
    DEFAULT_FINE_TUNE_LR,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::fusion::FusionError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("training data: {0}")]
    Data(String),
    #[error("non-finite value at epoch {epoch}, step {step}: {what}")]
    Numeric { epoch: usize, step: usize, what: String },
    #[error("checkpoint incompatible with requested model: {0}")]
    IncompatibleCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    FormatVersion(String),
    #[error("checkpoint checksum: {0}")]
    Checksum(String),
}
