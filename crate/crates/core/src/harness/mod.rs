//! Configuration, metrics, convergence detection and experiment drivers.

mod config;
mod convergence;
mod metrics;
mod output;
pub(crate) mod outcome;
mod run;
mod sweep;

pub use config::{
    Backend, CollectionPolicy, CollectionSpec, DataSpec, ExperimentConfig, ModelChoice,
    ModelSpec, Protocol, RuntimeSpec, ScheduleSpec,
};
pub use convergence::{
    epochs_to_epsilon, epochs_to_own_convergence, time_to_epsilon, ConvergenceCriterion, Direction,
};
pub use metrics::{metrics_csv_string, read_metrics_csv, write_metrics_csv, EvalTarget, MetricsRow};
pub use outcome::{IterationRecord, RunOutput, RunStats, RunStatus};
pub use run::{run_experiment, run_serial, run_with_workload};
pub use output::{write_run, RunSummary};
pub use sweep::{sweep, with_override, SweepAxis, SweepRow, SweepTable};
