//! The same shard and worker state machines run on real threads, talking
//! only through channels. Timestamps are wall-clock seconds since the run
//! started; latency draws become real sleeps scaled by `runtime.delay_scale`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use crate::error::{Error, Result};
use crate::harness::outcome::{EvalPoint, Evaluator, StalenessTally};
use crate::harness::{
    CollectionPolicy, ExperimentConfig, IterationRecord, Protocol, RunOutput, RunStats, RunStatus,
};
use crate::optim::LrSchedule;
use crate::protocol::shard::gather;
use crate::protocol::{GradientMessage, Offer, ReadSnapshot, ShardState, SyncCollector};
use crate::rng::{derive_rng, domain};
use crate::sim::{layer_event_times, sample_duration, LatencyModel, Workload};
use crate::tensor::{LayeredParams, SamplingSchedule};
use crate::trace::{EventKind, EventTrace, TraceEvent};

enum ToShard {
    Read {
        reply: Sender<(Vec<Vec<f64>>, u64)>,
    },
    /// `then_read` asks for the shard's state right after this gradient is
    /// handled, so a worker's next read follows its own apply immediately.
    Gradient {
        id: u64,
        msg: Arc<GradientMessage>,
        then_read: Option<Sender<(Vec<Vec<f64>>, u64)>>,
    },
    Snapshot {
        reply: Sender<ShardState>,
    },
    Stop,
}

enum ToWorker {
    Go(u64),
    Stop,
}

enum ToCoord {
    Applied { id: u64, staleness: u64 },
    IterDone { shard: usize, iter: u64, aggregated: usize },
    Idle { worker: usize },
    Failed(String),
}

/// Append-only event sink shared by every thread.
struct Sink {
    clock: Instant,
    record: bool,
    events: Mutex<Vec<TraceEvent>>,
}

impl Sink {
    fn now(&self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }

    fn record(&self, time: f64, kind: EventKind, worker: usize, shard: usize, layers: &[usize], iter: Option<u64>, version: u64) {
        if !self.record {
            return;
        }
        let mut events = self.events.lock().expect("trace sink poisoned");
        for &layer in layers {
            events.push(TraceEvent {
                time,
                kind,
                worker,
                shard,
                iter,
                layer: Some(layer),
                version,
            });
        }
    }
}

struct ShardReport {
    state: ShardState,
    arrivals: Vec<(u64, f64)>,
    received: u64,
    applied: u64,
    dropped: u64,
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    workload: &'a Workload,
    latency: LatencyModel,
    schedule: LrSchedule,
    sampling: SamplingSchedule,
    shard_layers: Vec<Vec<usize>>,
    shard_map: Vec<usize>,
    sink: Sink,
}

/// Runs the async or sync protocol with one thread per worker, one per
/// shard, and the calling thread as coordinator. Aborts with a runtime error
/// when no protocol event arrives within `runtime.quiet_period_s`.
pub fn run_concurrent(cfg: &ExperimentConfig, workload: &Workload) -> Result<RunOutput> {
    cfg.validate()?;
    let sync = match cfg.protocol {
        Protocol::Sync => true,
        Protocol::Async => false,
        p => return Err(Error::Config(format!("the concurrent backend runs async or sync, not {p:?}"))),
    };
    if sync && cfg.collection.policy == CollectionPolicy::Timeout {
        return Err(Error::Config(
            "the concurrent backend supports backup-worker collection only".into(),
        ));
    }
    let template = workload.init_params(cfg.shards_m, cfg.seed)?;
    let shared = Shared {
        cfg,
        workload,
        latency: cfg.latency.resolved()?,
        schedule: cfg.lr_schedule(workload.train_len()),
        sampling: SamplingSchedule::new(cfg.seed),
        shard_layers: (0..cfg.shards_m).map(|j| template.shard_layers(j)).collect(),
        shard_map: template.shard_map().to_vec(),
        sink: Sink {
            clock: Instant::now(),
            record: cfg.record_trace,
            events: Mutex::new(Vec::new()),
        },
    };
    let states = ShardState::partition(&template, &cfg.optimizer, cfg.ema())?;
    let (coord_tx, coord_rx) = unbounded();

    thread::scope(|scope| {
        let shared = &shared;
        let mut shard_txs = Vec::new();
        let mut shard_handles = Vec::new();
        for state in states {
            let (tx, rx) = unbounded();
            shard_txs.push(tx);
            let coord = coord_tx.clone();
            let collector = if sync {
                Some(SyncCollector::new(cfg.workers_n, cfg.backups_b))
                    .transpose()
                    .expect("validated config")
            } else {
                None
            };
            shard_handles.push(scope.spawn(move || shard_loop(shared, state, collector, rx, coord)));
        }
        let mut worker_txs = Vec::new();
        let mut worker_handles = Vec::new();
        for k in 0..cfg.total_workers() {
            let (tx, rx) = unbounded();
            worker_txs.push(tx);
            let coord = coord_tx.clone();
            let shards = shard_txs.clone();
            worker_handles.push(scope.spawn(move || {
                let res = if sync {
                    sync_worker(shared, k, rx, &shards, &coord)
                } else {
                    async_worker(shared, k, rx, &shards, &coord)
                };
                if let Err(e) = res {
                    let _ = coord.send(ToCoord::Failed(format!("worker {k}: {e}")));
                }
            }));
        }
        drop(coord_tx);

        let mut coord = Coordinator {
            shared,
            template: &template,
            sync,
            shard_txs: &shard_txs,
            worker_txs: &worker_txs,
            evaluator: Evaluator::new(workload, cfg.ema().is_some(), cfg.eval_every),
            staleness: StalenessTally::default(),
            status: RunStatus::Completed,
            error: None,
            completed: 0,
            global_iter: 0,
            barriers: vec![0.0],
            aggregated: Vec::new(),
        };
        coord.run(&coord_rx);

        for tx in &worker_txs {
            let _ = tx.send(ToWorker::Stop);
        }
        for h in worker_handles {
            h.join().expect("worker thread panicked");
        }
        for tx in &shard_txs {
            let _ = tx.send(ToShard::Stop);
        }
        let reports: Vec<ShardReport> = shard_handles
            .into_iter()
            .map(|h| h.join().expect("shard thread panicked"))
            .collect();
        for m in coord_rx.try_iter() {
            match m {
                ToCoord::Applied { staleness, .. } => coord.staleness.add(staleness),
                ToCoord::IterDone { .. } if sync => coord.staleness.add(0),
                _ => {}
            }
        }
        coord.finish(reports)
    })
}

struct Coordinator<'s, 'a> {
    shared: &'s Shared<'a>,
    template: &'s LayeredParams,
    sync: bool,
    shard_txs: &'s [Sender<ToShard>],
    worker_txs: &'s [Sender<ToWorker>],
    evaluator: Evaluator<'a>,
    staleness: StalenessTally,
    status: RunStatus,
    error: Option<Error>,
    completed: u64,
    global_iter: u64,
    barriers: Vec<f64>,
    aggregated: Vec<usize>,
}

impl Coordinator<'_, '_> {
    fn snapshot(&self) -> Vec<ShardState> {
        self.shard_txs
            .iter()
            .map(|tx| {
                let (reply, rx) = unbounded();
                tx.send(ToShard::Snapshot { reply }).expect("shard alive");
                rx.recv().expect("shard replies")
            })
            .collect()
    }

    fn epoch(&self) -> f64 {
        if self.sync {
            self.global_iter as f64
        } else {
            self.completed as f64 / self.shared.cfg.workers_n as f64
        }
    }

    fn evaluate(&mut self, last: bool) -> Result<()> {
        let epoch = self.epoch();
        if !last && !self.evaluator.is_due(epoch) {
            return Ok(());
        }
        let states = self.snapshot();
        let raw = gather(&states, self.template, false);
        let eval = if self.shared.cfg.ema().is_some() {
            gather(&states, self.template, true)
        } else {
            raw.clone()
        };
        let point = EvalPoint {
            epoch,
            time_s: self.shared.sink.now(),
            raw: &raw,
            eval: &eval,
            lr: self.shared.schedule.lr_at(states[0].update_count),
            staleness_mean: self.staleness.mean(),
        };
        let ok = if last {
            self.evaluator.finish(point)?
        } else {
            self.evaluator.record(point)?
        };
        if !ok {
            self.status = RunStatus::Diverged;
        }
        Ok(())
    }

    fn run(&mut self, rx: &Receiver<ToCoord>) {
        if let Err(e) = self.drive(rx) {
            self.error = Some(e);
        }
    }

    fn drive(&mut self, rx: &Receiver<ToCoord>) -> Result<()> {
        let cfg = self.shared.cfg;
        let n = cfg.workers_n;
        let m = cfg.shards_m;
        let quiet = Duration::from_secs_f64(cfg.runtime.quiet_period_s);
        let target = if self.sync {
            cfg.max_epochs.ceil() as u64
        } else {
            (cfg.max_epochs * n as f64).ceil() as u64
        };
        self.evaluate(false)?;

        let mut last_tag: Vec<Option<u64>> = vec![None; self.worker_txs.len()];
        let mut idle = vec![true; self.worker_txs.len()];
        let mut pending: HashMap<u64, usize> = HashMap::new();
        let mut shards_done = 0;
        let mut bottom_aggregated = 0;
        if self.sync {
            for (k, tx) in self.worker_txs.iter().enumerate() {
                let _ = tx.send(ToWorker::Go(0));
                last_tag[k] = Some(0);
                idle[k] = false;
            }
        }

        while self.status == RunStatus::Completed {
            let msg = match rx.recv_timeout(quiet) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Runtime(format!(
                        "no protocol event for {:.1} s; aborting",
                        quiet.as_secs_f64()
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Runtime("all threads exited early".into()))
                }
            };
            match msg {
                ToCoord::Failed(e) => return Err(Error::Runtime(e)),
                ToCoord::Applied { id, staleness } => {
                    self.staleness.add(staleness);
                    let count = pending.entry(id).or_insert(0);
                    *count += 1;
                    if *count == m {
                        pending.remove(&id);
                        self.completed += 1;
                        self.evaluate(false)?;
                        if self.completed >= target {
                            break;
                        }
                    }
                }
                ToCoord::IterDone { shard, iter, aggregated } => {
                    for _ in 0..aggregated {
                        self.staleness.add(0);
                    }
                    if shard == 0 {
                        bottom_aggregated = aggregated;
                    }
                    debug_assert_eq!(iter, self.global_iter);
                    shards_done += 1;
                    if shards_done < m {
                        continue;
                    }
                    shards_done = 0;
                    self.global_iter = iter + 1;
                    self.barriers.push(self.shared.sink.now());
                    self.aggregated.push(bottom_aggregated);
                    self.evaluate(false)?;
                    if self.global_iter >= target {
                        break;
                    }
                    for k in 0..idle.len() {
                        if idle[k] {
                            idle[k] = false;
                            last_tag[k] = Some(self.global_iter);
                            let _ = self.worker_txs[k].send(ToWorker::Go(self.global_iter));
                        }
                    }
                }
                ToCoord::Idle { worker } => {
                    let g = self.global_iter;
                    if last_tag[worker].is_none_or(|t| g > t) {
                        last_tag[worker] = Some(g);
                        let _ = self.worker_txs[worker].send(ToWorker::Go(g));
                    } else {
                        idle[worker] = true;
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(mut self, reports: Vec<ShardReport>) -> Result<RunOutput> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if self.status == RunStatus::Completed {
            let states: Vec<ShardState> = reports.iter().map(|r| r.state.clone()).collect();
            let raw = gather(&states, self.template, false);
            let eval = if self.shared.cfg.ema().is_some() {
                gather(&states, self.template, true)
            } else {
                raw.clone()
            };
            let point = EvalPoint {
                epoch: self.epoch(),
                time_s: self.shared.sink.now(),
                raw: &raw,
                eval: &eval,
                lr: self.shared.schedule.lr_at(states[0].update_count),
                staleness_mean: self.staleness.mean(),
            };
            if !self.evaluator.finish(point)? {
                self.status = RunStatus::Diverged;
            }
        }
        let mut events = std::mem::take(&mut *self.shared.sink.events.lock().expect("trace sink poisoned"));
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let bottom = &reports[0];
        let iterations = self
            .aggregated
            .iter()
            .enumerate()
            .map(|(t, &aggregated)| {
                let start = self.barriers[t];
                let mut arrivals: Vec<f64> = bottom
                    .arrivals
                    .iter()
                    .filter(|a| a.0 == t as u64)
                    .map(|a| a.1 - start)
                    .collect();
                arrivals.sort_by(f64::total_cmp);
                IterationRecord {
                    iter: t as u64,
                    start,
                    apply_time: self.barriers[t + 1],
                    aggregated,
                    arrivals,
                }
            })
            .collect();
        let states: Vec<ShardState> = reports.iter().map(|r| r.state.clone()).collect();
        let stats = RunStats {
            epochs: self.epoch(),
            time_s: self.shared.sink.now(),
            updates: if self.sync { self.global_iter } else { self.completed },
            gradients_sent: bottom.received,
            gradients_applied: bottom.applied,
            gradients_dropped: bottom.dropped,
            staleness_mean: self.staleness.mean(),
            staleness_max: self.staleness.max(),
            timeout_retries: 0,
        };
        Ok(RunOutput {
            status: self.status,
            rows: self.evaluator.rows,
            trace: EventTrace { events },
            final_params: gather(&states, self.template, false),
            checkpoints: self.evaluator.checkpoints,
            iterations,
            stats,
        })
    }
}

fn shard_loop(
    shared: &Shared<'_>,
    mut state: ShardState,
    mut collector: Option<SyncCollector>,
    rx: Receiver<ToShard>,
    coord: Sender<ToCoord>,
) -> ShardReport {
    let j = state.shard_id;
    let layers = &shared.shard_layers[j];
    let sink = &shared.sink;
    let mut report = ShardReport {
        state: state.clone(),
        arrivals: Vec::new(),
        received: 0,
        applied: 0,
        dropped: 0,
    };
    let mut failed = false;
    for m in rx.iter() {
        match m {
            ToShard::Read { reply } => {
                let _ = reply.send(state.read());
            }
            ToShard::Snapshot { reply } => {
                let _ = reply.send(state.clone());
            }
            ToShard::Stop => break,
            ToShard::Gradient { .. } if failed => {}
            ToShard::Gradient { id, msg, then_read } => {
                report.received += 1;
                let res = match collector.as_mut() {
                    None => state.async_apply(&msg, &shared.schedule).map(|out| {
                        sink.record(sink.now(), EventKind::Apply, msg.worker_id, j, layers, None, out.version);
                        report.applied += 1;
                        let _ = coord.send(ToCoord::Applied { id, staleness: out.staleness });
                    }),
                    Some(c) => {
                        let arrived = sink.now();
                        if let Some(t) = msg.iter_tag {
                            report.arrivals.push((t, arrived));
                        }
                        sync_offer(shared, &mut state, c, &msg, &coord, &mut report)
                    }
                };
                if let Err(e) = res {
                    failed = true;
                    let _ = coord.send(ToCoord::Failed(format!("shard {j}: {e}")));
                }
                if let Some(reply) = then_read {
                    let _ = reply.send(state.read());
                }
            }
        }
    }
    report.state = state;
    report
}

fn sync_offer(
    shared: &Shared<'_>,
    state: &mut ShardState,
    collector: &mut SyncCollector,
    msg: &GradientMessage,
    coord: &Sender<ToCoord>,
    report: &mut ShardReport,
) -> Result<()> {
    let j = state.shard_id;
    let layers = &shared.shard_layers[j];
    let sink = &shared.sink;
    match collector.offer(msg.clone())? {
        Offer::Accepted { ready: false } => {}
        Offer::Accepted { ready: true } => {
            let t = collector.current_iter();
            let mut accepted = collector.take()?;
            accepted.sort_by_key(|m| m.worker_id);
            state.sync_apply(&accepted, shared.cfg.workers_n, &shared.schedule)?;
            let now = sink.now();
            for m in &accepted {
                sink.record(now, EventKind::Apply, m.worker_id, j, layers, Some(t), t);
            }
            report.applied += accepted.len() as u64;
            let _ = coord.send(ToCoord::IterDone {
                shard: j,
                iter: t,
                aggregated: accepted.len(),
            });
        }
        Offer::DroppedStale | Offer::DroppedSurplus => {
            sink.record(sink.now(), EventKind::Drop, msg.worker_id, j, layers, msg.iter_tag, state.update_count);
            report.dropped += 1;
        }
    }
    Ok(())
}

/// Planned (read, send) offsets of one step, in seconds of real time.
fn plan_step(shared: &Shared<'_>, rng: &mut rand_chacha::ChaCha8Rng, k: usize) -> Vec<(f64, f64)> {
    let d = sample_duration(&shared.latency, k, rng);
    let costs = shared.cfg.timing.layer_costs(d, shared.shard_map.len());
    let scale = shared.cfg.runtime.delay_scale;
    layer_event_times(&costs, 0.0)
        .into_iter()
        .map(|(r, s)| (r * scale, s * scale))
        .collect()
}

/// Sleeps until `start + offset`; true if the coordinator said stop meanwhile.
fn pause(control: &Receiver<ToWorker>, start: Instant, offset: f64) -> bool {
    let at = start + Duration::from_secs_f64(offset.max(0.0));
    match control.recv_deadline(at) {
        Ok(_) => true,
        Err(RecvTimeoutError::Timeout) => false,
        Err(RecvTimeoutError::Disconnected) => true,
    }
}

fn read_shard(shard: &Sender<ToShard>) -> Result<(Vec<Vec<f64>>, u64)> {
    let (reply, rx) = unbounded();
    shard
        .send(ToShard::Read { reply })
        .map_err(|_| Error::Runtime("shard stopped".into()))?;
    rx.recv().map_err(|_| Error::Runtime("shard stopped".into()))
}

fn batch_rows(shared: &Shared<'_>, k: usize, t: u64, sync: bool) -> Vec<usize> {
    let b = shared.cfg.batch_b;
    if !shared.workload.is_trainable() {
        return vec![0; b];
    }
    let n = shared.workload.train_len();
    if sync {
        shared.sampling.sync_chunk(t, k, b, n)
    } else {
        shared.sampling.async_batch(k, t, b, n)
    }
}

/// Per-layer planned times, every layer taking its shard's lowest layer's.
fn layer_times(shared: &Shared<'_>, plan: &[(f64, f64)], base: f64) -> (Vec<f64>, Vec<f64>) {
    let mut reads = vec![0.0; plan.len()];
    let mut sends = vec![0.0; plan.len()];
    for layers in &shared.shard_layers {
        let (r, s) = plan[layers[0]];
        for &l in layers {
            reads[l] = base + r;
            sends[l] = base + s;
        }
    }
    (reads, sends)
}

#[allow(clippy::too_many_arguments)]
fn send_all(
    shared: &Shared<'_>,
    control: &Receiver<ToWorker>,
    k: usize,
    id: u64,
    msg: GradientMessage,
    plan: &[(f64, f64)],
    start: Instant,
    shards: &[Sender<ToShard>],
    prefetch: Option<Sender<(Vec<Vec<f64>>, u64)>>,
) -> Result<bool> {
    let msg = Arc::new(msg);
    let mut prefetch = prefetch;
    for j in (0..shards.len()).rev() {
        let layers = &shared.shard_layers[j];
        if pause(control, start, plan[layers[0]].1) {
            return Ok(true);
        }
        let sink = &shared.sink;
        sink.record(sink.now(), EventKind::Send, k, j, layers, msg.iter_tag, msg.read_versions[j]);
        shards[j]
            .send(ToShard::Gradient {
                id,
                msg: Arc::clone(&msg),
                then_read: if j == 0 { prefetch.take() } else { None },
            })
            .map_err(|_| Error::Runtime("shard stopped".into()))?;
    }
    Ok(false)
}

fn async_worker(
    shared: &Shared<'_>,
    k: usize,
    control: Receiver<ToWorker>,
    shards: &[Sender<ToShard>],
    _coord: &Sender<ToCoord>,
) -> Result<()> {
    let mut rng = derive_rng(shared.cfg.seed, &[domain::LATENCY, k as u64]);
    let stride = shared.cfg.total_workers() as u64;
    let sink = &shared.sink;
    let mut prefetched: Option<Receiver<(Vec<Vec<f64>>, u64)>> = None;
    for step in 0u64.. {
        let plan = plan_step(shared, &mut rng, k);
        let start = Instant::now();
        let base = sink.now();
        let mut reads = Vec::with_capacity(shards.len());
        for (j, shard) in shards.iter().enumerate() {
            let layers = &shared.shard_layers[j];
            if pause(&control, start, plan[layers[0]].0) {
                return Ok(());
            }
            let (slice, v) = match prefetched.take() {
                Some(rx) if j == 0 => rx.recv().map_err(|_| Error::Runtime("shard stopped".into()))?,
                _ => read_shard(shard)?,
            };
            sink.record(sink.now(), EventKind::Read, k, j, layers, None, v);
            reads.push((slice, v));
        }
        let snapshot = ReadSnapshot::assemble(&shared.shard_map, reads)?;
        let rows = batch_rows(shared, k, step, false);
        let (read_times, send_times) = layer_times(shared, &plan, base);
        let msg = shared
            .workload
            .async_message(&snapshot, &rows, k, shared.cfg.clip_norm)?
            .with_layer_times(read_times, send_times)?;
        // The bottom shard is read first at the start of every step.
        let (tx, rx) = unbounded();
        prefetched = Some(rx);
        if send_all(shared, &control, k, step * stride + k as u64, msg, &plan, start, shards, Some(tx))? {
            break;
        }
    }
    Ok(())
}

fn sync_worker(
    shared: &Shared<'_>,
    k: usize,
    control: Receiver<ToWorker>,
    shards: &[Sender<ToShard>],
    coord: &Sender<ToCoord>,
) -> Result<()> {
    let mut rng = derive_rng(shared.cfg.seed, &[domain::LATENCY, k as u64]);
    let sink = &shared.sink;
    for m in control.iter() {
        let ToWorker::Go(g) = m else { break };
        let plan = plan_step(shared, &mut rng, k);
        let start = Instant::now();
        let base = sink.now();
        let mut reads = Vec::with_capacity(shards.len());
        for shard in shards {
            reads.push(read_shard(shard)?);
        }
        // Another iteration may already have closed on some shard; such a
        // worker sits this iteration out.
        if reads.iter().all(|r| r.1 == g) {
            let now = sink.now();
            for j in 0..shards.len() {
                sink.record(now, EventKind::Read, k, j, &shared.shard_layers[j], Some(g), g);
            }
            let snapshot = ReadSnapshot::assemble(&shared.shard_map, reads)?;
            let rows = batch_rows(shared, k, g, true);
            let (_, send_times) = layer_times(shared, &plan, base);
            let msg = shared
                .workload
                .sync_message(&snapshot, g, &rows, k)?
                .with_layer_times(vec![base; plan.len()], send_times)?;
            if send_all(shared, &control, k, g, msg, &plan, start, shards, None)? {
                break;
            }
        } else if pause(&control, start, plan[0].1) {
            break;
        }
        let _ = coord.send(ToCoord::Idle { worker: k });
    }
    Ok(())
}
