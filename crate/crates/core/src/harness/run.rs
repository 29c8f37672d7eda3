use crate::error::{Error, Result};
use crate::optim::{clip_by_global_norm, EmaState, OptState};
use crate::rng::{derive_rng, domain};
use crate::sim::{run_sim, Workload};
use crate::staleness::{stale_step, ParamHistory};
use crate::tensor::{LayeredParams, SamplingSchedule};

use super::config::{Backend, ExperimentConfig, Protocol};
use super::outcome::{EvalPoint, Evaluator, RunOutput, RunStats, RunStatus, StalenessTally};

/// Builds the workload from the config and runs it on the configured backend.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let workload = Workload::from_config(cfg)?;
    run_with_workload(cfg, &workload)
}

pub fn run_with_workload(cfg: &ExperimentConfig, workload: &Workload) -> Result<RunOutput> {
    match cfg.protocol {
        Protocol::Serial | Protocol::SerialStale => run_serial(cfg, workload),
        Protocol::Sync | Protocol::Async => match cfg.backend {
            Backend::Sim => run_sim(cfg, workload),
            Backend::Concurrent => crate::runtime::run_concurrent(cfg, workload),
        },
    }
}

/// Single-process mini-batch SGD with batch `B`, optionally with injected
/// staleness. One step is one epoch in the harness's accounting; simulated
/// time advances by the latency model's mean per step.
pub fn run_serial(cfg: &ExperimentConfig, workload: &Workload) -> Result<RunOutput> {
    cfg.validate()?;
    let stale = match cfg.protocol {
        Protocol::Serial => false,
        Protocol::SerialStale => true,
        p => return Err(Error::Config(format!("run_serial cannot run {p:?}"))),
    };
    let Workload::Train { model, train, .. } = workload else {
        return Err(Error::Config("serial protocols need a trainable model".into()));
    };
    let mut params = workload.init_params(cfg.shards_m, cfg.seed)?;
    let schedule = cfg.lr_schedule(train.len());
    let sampling = SamplingSchedule::new(cfg.seed);
    let step_time = cfg.latency.resolved()?.mean_duration().unwrap_or(1.0);
    let mut opt = OptState::new(&cfg.optimizer, &params.layer_sizes());
    let mut ema = match cfg.ema() {
        Some(a) => Some(EmaState::new(params.layers().to_vec(), a)?),
        None => None,
    };
    let stale_schedule = cfg.staleness.schedule();
    let lr_factor = if stale { cfg.staleness.lr_factor() } else { 1.0 };
    let mut history = if stale {
        Some(ParamHistory::new(
            cfg.staleness.history_depth(),
            0,
            params.layers().to_vec(),
        )?)
    } else {
        None
    };
    let mut rng = derive_rng(cfg.seed, &[domain::STALENESS]);
    let mut tally = StalenessTally::default();
    let mut evaluator = Evaluator::new(workload, ema.is_some(), cfg.eval_every);
    let mut status = RunStatus::Completed;
    let target = cfg.max_epochs.ceil() as u64;

    let eval_params = |params: &LayeredParams, ema: &Option<EmaState>| -> Result<LayeredParams> {
        match ema {
            Some(e) => LayeredParams::with_shard_map(e.shadow.clone(), params.shard_map().to_vec()),
            None => Ok(params.clone()),
        }
    };

    let mut t = 0u64;
    let initial = eval_params(&params, &ema)?;
    evaluator.record(EvalPoint {
        epoch: 0.0,
        time_s: 0.0,
        raw: &params,
        eval: &initial,
        lr: schedule.lr_at(0) * lr_factor,
        staleness_mean: 0.0,
    })?;
    while t < target {
        let rows = sampling.iteration(t, cfg.batch_b, train.len());
        let lr = schedule.lr_at(t) * lr_factor;
        match history.as_mut() {
            Some(h) => {
                let realized = stale_step(
                    h,
                    &stale_schedule,
                    schedule.data_epoch(t),
                    model,
                    train,
                    &rows,
                    &mut opt,
                    lr,
                    &mut rng,
                )?;
                tally.add(realized);
                params.layers_mut().clone_from_slice(h.latest().1);
            }
            None => {
                let mut grad = model.eval_gradient(&params, train, &rows)?;
                if let Some(c) = cfg.clip_norm {
                    grad = clip_by_global_norm(&grad, c)?;
                }
                opt.step(params.layers_mut(), &grad.layers, lr)?;
                tally.add(0);
            }
        }
        if let Some(e) = ema.as_mut() {
            e.update_in_place(params.layers())?;
        }
        t += 1;
        if !params.is_finite() {
            status = RunStatus::Diverged;
            break;
        }
        let epoch = t as f64;
        if evaluator.is_due(epoch) || t == target {
            let eval = eval_params(&params, &ema)?;
            let point = EvalPoint {
                epoch,
                time_s: epoch * step_time,
                raw: &params,
                eval: &eval,
                lr: schedule.lr_at(t) * lr_factor,
                staleness_mean: tally.mean(),
            };
            let ok = if t == target {
                evaluator.finish(point)?
            } else {
                evaluator.record(point)?
            };
            if !ok {
                status = RunStatus::Diverged;
                break;
            }
        }
    }
    Ok(RunOutput {
        status,
        rows: evaluator.rows,
        trace: Default::default(),
        final_params: params,
        checkpoints: evaluator.checkpoints,
        iterations: Vec::new(),
        stats: RunStats {
            epochs: t as f64,
            time_s: t as f64 * step_time,
            updates: t,
            gradients_sent: t,
            gradients_applied: t,
            gradients_dropped: 0,
            staleness_mean: tally.mean(),
            staleness_max: tally.max(),
            timeout_retries: 0,
        },
    })
}
