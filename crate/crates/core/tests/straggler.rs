use pssim_core::harness::{run_experiment, ConvergenceCriterion, ExperimentConfig, ModelChoice, Protocol};
use pssim_core::sim::LatencyModel;
use pssim_core::straggler::{
    arrival_cdf, arrival_stats_from_records, best_config, iterations_to_converge, kth_arrival_stats,
    IterationsCurve, LatencySource, DEFAULT_MC_ITERATIONS,
};

fn timing_sync(n: usize, b: usize, iterations: usize, latency: LatencyModel) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        protocol: Protocol::Sync,
        workers_n: n,
        backups_b: b,
        max_epochs: iterations as f64,
        eval_every: 1e9,
        seed: 8,
        latency,
        ..Default::default()
    };
    cfg.model.kind = ModelChoice::TimingOnly;
    cfg
}

fn fraction_below(times: &[f64], limit: f64) -> f64 {
    times.iter().filter(|&&t| t < limit).count() as f64 / times.len() as f64
}

#[test]
fn lone_deterministic_worker_arrives_at_its_latency() {
    let out = run_experiment(&timing_sync(1, 0, 50, LatencyModel::deterministic(1.5))).unwrap();
    let stats = arrival_stats_from_records(&out.iterations, 1, &[1]).unwrap();
    assert_eq!(stats.row(1).unwrap().count, 50);
    assert!((stats.mean_kth(1).unwrap() - 1.5).abs() < 1e-12);
    assert!(stats.row(1).unwrap().std_err < 1e-12);
}

#[test]
fn trace_and_records_agree() {
    let mut cfg = timing_sync(5, 2, 300, LatencyModel::exponential(1.0));
    cfg.model.layers = 3;
    cfg.shards_m = 2;
    let out = run_experiment(&cfg).unwrap();
    let ks: Vec<usize> = (1..=7).collect();
    let from_trace = kth_arrival_stats(&out.trace, &ks).unwrap();
    let from_records = arrival_stats_from_records(&out.iterations, 7, &ks).unwrap();
    assert_eq!(from_trace.total_workers, 7);
    assert_eq!(from_trace.iterations.len(), from_records.iterations.len());
    for (a, b) in from_trace.iterations.iter().zip(&from_records.iterations) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
    // Sorted per iteration, so the mean is monotone in k.
    for w in from_trace.rows.windows(2) {
        assert!(w[1].mean >= w[0].mean);
    }
}

#[test]
fn deterministic_latencies_give_unit_step_cdf() {
    let out = run_experiment(&timing_sync(4, 0, 40, LatencyModel::deterministic(2.0))).unwrap();
    let stats = arrival_stats_from_records(&out.iterations, 4, &[1, 4]).unwrap();
    for k in [1, 4] {
        let cdf = arrival_cdf(&stats, k).unwrap();
        assert!(cdf.iter().all(|&(t, _)| (t - 2.0).abs() < 1e-12));
        assert_eq!(cdf.last().unwrap().1, 1.0);
    }
}

#[test]
fn later_arrivals_are_stochastically_dominated() {
    let out = run_experiment(&timing_sync(10, 0, 2000, LatencyModel::lognormal(0.0, 0.6))).unwrap();
    let ks = [1, 5, 9, 10];
    let stats = arrival_stats_from_records(&out.iterations, 10, &ks).unwrap();
    let at = |k: usize| -> Vec<f64> { stats.iterations.iter().map(|it| it[k - 1]).collect() };
    for w in ks.windows(2) {
        let (lighter, heavier) = (at(w[0]), at(w[1]));
        for limit in [0.5, 1.0, 1.5, 2.0, 3.0] {
            assert!(fraction_below(&heavier, limit) <= fraction_below(&lighter, limit));
        }
    }
}

#[test]
fn pareto_tail_separates_last_arrivals() {
    let out = run_experiment(&timing_sync(100, 0, 2000, LatencyModel::pareto_mixture())).unwrap();
    let stats = arrival_stats_from_records(&out.iterations, 100, &[98, 100]).unwrap();
    let at = |k: usize| -> Vec<f64> { stats.iterations.iter().map(|it| it[k - 1]).collect() };
    let (p98, p100) = (fraction_below(&at(98), 2.0), fraction_below(&at(100), 2.0));
    assert!(p98 > p100, "{p98} vs {p100}");
}

#[test]
fn few_stragglers_favour_a_handful_of_backups() {
    // Two slow machines in a hundred on average: the 98th gradient is usually
    // fast while the last one is usually not.
    let mut latency = LatencyModel::pareto_mixture();
    latency.fast_fraction = 0.98;
    let out = run_experiment(&timing_sync(100, 0, 2000, latency.clone())).unwrap();
    let stats = arrival_stats_from_records(&out.iterations, 100, &[98, 100]).unwrap();
    let at = |k: usize| -> Vec<f64> { stats.iterations.iter().map(|it| it[k - 1]).collect() };
    assert!(fraction_below(&at(98), 2.0) > 0.5);
    assert!(fraction_below(&at(100), 2.0) < 0.3);

    let curve = IterationsCurve::new(vec![(50, 137.5e3), (100, 76.2e3)]).unwrap();
    let est = best_config(100, &curve, &LatencySource::Model(latency), DEFAULT_MC_ITERATIONS, 3).unwrap();
    assert!((1..=10).contains(&est.best.b), "best b = {}", est.best.b);
}

#[test]
fn more_workers_need_fewer_iterations() {
    let mut base = ExperimentConfig {
        batch_b: 4,
        max_epochs: 400.0,
        eval_every: 5.0,
        ema_alpha: 0.0,
        seed: 4,
        ..Default::default()
    };
    base.data.n_train = 1000;
    base.data.n_test = 500;
    base.schedule.gamma0 = 0.05;
    base.convergence = ConvergenceCriterion::new(0.2, 3);
    let report = iterations_to_converge(&base, &[1, 4]).unwrap();
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    let it = |i: usize| report.points[i].iterations.unwrap();
    assert!(it(1) < it(0), "N=1: {}, N=4: {}", it(0), it(1));
}
