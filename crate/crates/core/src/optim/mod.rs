//! Update rules, learning-rate schedules, parameter EMA and gradient clipping.

mod ema;
mod rules;
mod schedule;

pub use ema::EmaState;
pub use rules::{
    clip_by_global_norm, rmsprop_momentum_step, sgd_step, sgd_step_in_place, OptState,
    OptimizerConfig, OptimizerKind, RmsPropState,
};
pub use schedule::{LrSchedule, ScheduleKind};
