//! Model pipeline: the pose encoder, RF encoder, and keypoint predictor,
//! their three-phase training schedule, dataset handling, checkpoints,
//! and inference.

pub mod checkpoint;
pub mod dataset;
pub mod infer;
pub mod loss;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedCheckpoint};
pub use dataset::{RfDataset, VolumeBuilder};
pub use infer::{infer, infer_sequence};
pub use loss::{loss_abs, loss_centered, ot_batch_loss, ot_batch_loss_with_plan};
pub use model::{KeypointPredictor, PoseEncoder, RfEncoder};
pub use train::{
    compute_zp_targets, evaluate_pose_reconstruction, evaluate_rf, fine_tune,
    train_pose_embedding, train_rf_transport, CheckpointSink, MetricsLog, MetricsRow, TrainConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("optimal transport error: {0}")]
    Ot(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] rfpose_core::CoreError),

    #[error(transparent)]
    Neural(#[from] rfpose_neural::NeuralError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
