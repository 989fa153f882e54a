//! Optimizer, training loop and checkpoint files.

pub mod adamw;
pub mod checkpoint;
pub mod model;
pub mod trainer;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use model::TaeModel;
pub use trainer::{prepare_sample, sample_gradients, samples_from_records, EpochStats, LossParts, LrSchedule, TrainConfig, TrainSample, Trainer};
