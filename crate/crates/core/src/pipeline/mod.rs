//! The layer-by-layer prune / fine-tune schedule and the training loops it
//! relies on.

mod config;
mod report;
mod schedule;
mod train;

pub use config::{PruneConfig, PrunePercent, RetrainScope, TrainSettings};
pub use report::{RunReport, StepRecord};
pub use schedule::{prune_order, run_prune_schedule, run_prune_schedule_into};
pub use train::{
    epochs_to_peak, fine_tune, fine_tune_tracked, train, train_from_scratch, trainable_layers,
    FineTuneOptions,
};
