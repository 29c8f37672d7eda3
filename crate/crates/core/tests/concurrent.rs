use pssim_core::harness::{run_experiment, Backend, ExperimentConfig, ModelChoice, Protocol};
use pssim_core::runtime::run_concurrent;
use pssim_core::sim::{LatencyModel, Workload};
use pssim_core::staleness::measure_staleness;
use pssim_core::trace::{validate_trace, AggregationCheck, EventKind};
use pssim_core::Error;

fn base(protocol: Protocol, n: usize, b: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        protocol,
        backend: Backend::Concurrent,
        workers_n: n,
        backups_b: b,
        batch_b: 8,
        seed: 5,
        latency: LatencyModel::deterministic(1.0),
        ..Default::default()
    };
    cfg.data.n_train = 400;
    cfg.data.n_test = 100;
    cfg.schedule.gamma0 = 0.1;
    cfg
}

#[test]
fn sync_without_delays_aggregates_exactly_n_and_matches_sim() {
    let mut cfg = base(Protocol::Sync, 4, 0);
    cfg.model.kind = ModelChoice::Mlp;
    cfg.model.hidden = vec![5];
    cfg.shards_m = 2;
    cfg.max_epochs = 30.0;
    let out = run_experiment(&cfg).unwrap();
    assert!(out.iterations.iter().all(|r| r.aggregated == 4));
    let report = validate_trace(&out.trace, AggregationCheck::Exactly(4));
    assert!(report.is_ok(), "{:?}", report.violations);
    assert_eq!(report.iterations, 30);

    cfg.backend = Backend::Sim;
    let sim = run_experiment(&cfg).unwrap();
    for (a, b) in out.final_params.flat().iter().zip(sim.final_params.flat()) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12));
    }
}

#[test]
fn ten_times_slower_backup_is_nearly_always_dropped() {
    let mut cfg = base(Protocol::Sync, 3, 1);
    cfg.model.kind = ModelChoice::TimingOnly;
    cfg.latency = LatencyModel::deterministic(1.0).with_bias(vec![1.0, 1.0, 1.0, 10.0]);
    cfg.runtime.delay_scale = 5e-4;
    cfg.max_epochs = 200.0;
    let out = run_experiment(&cfg).unwrap();
    let count = |kind| {
        out.trace
            .events
            .iter()
            .filter(|e| e.kind == kind && e.worker == 3 && e.shard == 0)
            .count()
    };
    let (sent, dropped) = (count(EventKind::Send), count(EventKind::Drop));
    assert!(sent > 0);
    assert!(dropped as f64 > 0.9 * sent as f64, "{dropped}/{sent}");
    assert!(validate_trace(&out.trace, AggregationCheck::Exactly(3)).is_ok());
}

#[test]
fn async_equal_delays_give_staleness_near_n_minus_one() {
    let mut cfg = base(Protocol::Async, 8, 0);
    cfg.latency = LatencyModel::deterministic(1.0);
    cfg.runtime.delay_scale = 2e-3;
    cfg.max_epochs = 60.0;
    let out = run_experiment(&cfg).unwrap();
    let mean = measure_staleness(&out.trace).unwrap().overall.unwrap().mean;
    assert!((5.5..=8.5).contains(&mean), "mean staleness {mean}");
    assert!(validate_trace(&out.trace, AggregationCheck::Infer).is_ok());
}

#[test]
fn watchdog_aborts_a_silent_run() {
    let mut cfg = base(Protocol::Async, 2, 0);
    cfg.latency = LatencyModel::deterministic(30.0);
    cfg.runtime.delay_scale = 1.0;
    cfg.runtime.quiet_period_s = 0.2;
    let start = std::time::Instant::now();
    let err = run_concurrent(&cfg, &Workload::from_config(&cfg).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Runtime(_)), "{err}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn timeout_collection_is_rejected() {
    let mut cfg = base(Protocol::Sync, 2, 0);
    cfg.collection.policy = pssim_core::harness::CollectionPolicy::Timeout;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}
