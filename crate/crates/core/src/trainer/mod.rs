//! Alternating generator/discriminator training and the baselines.

mod checkpoint;
mod config;
mod evaluate;
mod history;
mod train;

pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint, Checkpoint};
pub use config::{init_models, lr_schedule, Method, TrainerConfig};
pub use evaluate::{evaluate, MASK_THRESHOLD};
pub use history::{EpochRecord, StepRecord, TrainHistory};
pub use train::{train, train_baseline, train_observed, EpochEvent};
