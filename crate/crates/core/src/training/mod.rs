//! Multi-task loss, targets, rectified Adam with weight averaging, and a
//! synthetic dataset for small end-to-end runs.

mod config;
mod loss;
mod optim;
mod targets;
mod toy;
mod train;

pub use config::TrainConfig;
pub use loss::multitask_loss;
pub use optim::{radam_step, swa_update, RAdamState, ADAM_EPS, BETA1, BETA2, RECTIFY_THRESHOLD};
pub use targets::{build_targets, TrainingTargets, DURATION_SLACK_SECONDS};
pub use toy::{make_toy_dataset, render_toy, stem_names, toy_profiles, ToyPlan, ToyTrack, MIN_SECTION_SECONDS, MIN_TOY_SECONDS};
pub use train::{history_jsonl, train, train_from, EpochRecord, StopReason, TrainOutcome};
