//! Deterministic discrete-event simulation of the protocols.

mod engine;
mod latency;
mod timing;
mod workload;

pub use engine::run_sim;
pub use latency::{read_samples, sample_duration, LatencyKind, LatencyModel};
pub use timing::{layer_event_times, LayerCosts, TimingProfile};
pub use workload::{Evaluation, Workload};
