//! Loss, training loop, rigid pose fitting, rollouts, metrics and
//! checkpoints.

mod checkpoint;
mod data;
mod evaluate;
mod kabsch;
mod loss;
mod rollout;
mod train;

pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, write_atomic,
    CheckpointManifest, ParamRecord, CHECKPOINT_MAGIC,
};
pub use data::{fit_normalizer, frame_range, normalized_target, raw_target, track};
pub use evaluate::{evaluate, MetricsReport, SceneMetrics};
pub use kabsch::{kabsch_fit, rmsd};
pub use loss::{batch_loss, training_loss, HUBER_DELTA};
pub use rollout::{export_rollout, full_length, rollout, rollout_all, rollout_sequence, RolloutResult};
pub use train::{
    evaluation_loss, make_sample, train, validation_frames, Sample, TrainConfig, TrainReport, BEST_CHECKPOINT,
};
