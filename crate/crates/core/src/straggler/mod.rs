//! Straggler analysis: k-th arrival statistics, iterations-to-converge
//! curves, and the (N, b) running-time estimator.

mod arrivals;
mod best;
mod curve;

pub use arrivals::{
    arrival_cdf, arrival_stats_from_records, kth_arrival_stats, quantile, ArrivalStats, KStats,
};
pub use best::{
    best_config, iterations_to_converge, mean_kth_arrival, ConfigEstimate, CurvePoint, CurveReport,
    LatencySource, SplitRow, DEFAULT_MC_ITERATIONS,
};
pub use curve::IterationsCurve;
