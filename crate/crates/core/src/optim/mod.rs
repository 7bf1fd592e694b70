//! Parameter updates, learning-rate schedule and the training loop.

pub mod adam;
pub mod schedule;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use schedule::{LrSchedule, Phase, PhaseMode};
pub use train::{checkpoint_name, fit, validate, EpochRecord, History, TrainConfig, HISTORY_HEADER};
