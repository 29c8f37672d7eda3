//! Injected staleness for serial training, and staleness statistics measured
//! from protocol traces.

mod history;
mod schedule;
mod stats;

pub use history::{stale_step, ParamHistory};
pub use schedule::{ramp_target, StalenessConfig, StalenessDistribution, StalenessSchedule};
pub use stats::{measure_staleness, summarize, LayerStaleness, StalenessStats, Summary};
