//! Forward recursion, loss, optimizers, learning-rate schedules and the
//! training loop.

mod optim;
mod rollout;
mod schedule;
mod train;

pub use optim::{adam_step, pow_abs, sgd_step, AdamConfig, Optimizer, TrainState};
pub use rollout::{exact_bsb_loss, rollout, ExactBsbModel, InitialState, NetworkModel, Objective, Rollout, SpatialModel};
pub use schedule::{Schedule, SCHEDULE_NAMES};
pub use train::{MetricsRow, TrainConfig, Trainer};
