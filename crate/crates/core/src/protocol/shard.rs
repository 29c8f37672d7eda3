use crate::error::{shape, Error, Result};
use crate::optim::{EmaState, LrSchedule, OptState, OptimizerConfig};
use crate::tensor::LayeredParams;

use super::message::GradientMessage;

/// One parameter server: a contiguous block of layers, its update counter,
/// optimizer accumulators and EMA shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardState {
    pub shard_id: usize,
    /// Global indices of the owned layers, bottom-up.
    pub layers: Vec<usize>,
    pub params: Vec<Vec<f64>>,
    pub update_count: u64,
    pub opt_state: OptState,
    pub ema: Option<EmaState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncApply {
    /// Update counter before this apply.
    pub version: u64,
    pub staleness: u64,
    pub lr: f64,
}

impl ShardState {
    pub fn new(
        shard_id: usize,
        params: &LayeredParams,
        optimizer: &OptimizerConfig,
        ema_alpha: Option<f64>,
    ) -> Result<Self> {
        let layers = params.shard_layers(shard_id);
        if layers.is_empty() {
            return Err(shape(format!("shard {shard_id} owns no layers")));
        }
        let slice = params.shard_slice(shard_id);
        let sizes: Vec<usize> = slice.iter().map(Vec::len).collect();
        let ema = ema_alpha
            .map(|a| EmaState::new(slice.clone(), a))
            .transpose()?;
        Ok(Self {
            shard_id,
            layers,
            params: slice,
            update_count: 0,
            opt_state: OptState::new(optimizer, &sizes),
            ema,
        })
    }

    /// One shard per entry of the params' shard map.
    pub fn partition(
        params: &LayeredParams,
        optimizer: &OptimizerConfig,
        ema_alpha: Option<f64>,
    ) -> Result<Vec<Self>> {
        (0..params.num_shards())
            .map(|j| Self::new(j, params, optimizer, ema_alpha))
            .collect()
    }

    pub fn read(&self) -> (Vec<Vec<f64>>, u64) {
        (self.params.clone(), self.update_count)
    }

    /// The EMA shadow, or the raw slice when no EMA is kept.
    pub fn eval_slice(&self) -> &[Vec<f64>] {
        self.ema.as_ref().map_or(&self.params, |e| &e.shadow)
    }

    fn own_slice<'a>(&self, msg: &'a GradientMessage) -> Result<Vec<&'a [f64]>> {
        self.layers
            .iter()
            .zip(&self.params)
            .map(|(&l, p)| match msg.grad.layers.get(l) {
                Some(g) if g.len() == p.len() => Ok(g.as_slice()),
                _ => Err(shape(format!(
                    "gradient from worker {} does not match layer {l} of shard {}",
                    msg.worker_id, self.shard_id
                ))),
            })
            .collect()
    }

    fn step(&mut self, grad: &[Vec<f64>], lr: f64) -> Result<()> {
        self.opt_state.step(&mut self.params, grad, lr)?;
        if let Some(ema) = &mut self.ema {
            ema.update_in_place(&self.params)?;
        }
        self.update_count += 1;
        Ok(())
    }

    /// Applies one gradient with `γ` indexed by this shard's own counter.
    pub fn async_apply(&mut self, msg: &GradientMessage, schedule: &LrSchedule) -> Result<AsyncApply> {
        let read = *msg.read_versions.get(self.shard_id).ok_or_else(|| {
            shape(format!(
                "message from worker {} has no read version for shard {}",
                msg.worker_id, self.shard_id
            ))
        })?;
        if read > self.update_count {
            return Err(Error::Protocol(format!(
                "worker {} read shard {} at version {read} beyond its counter {}",
                msg.worker_id, self.shard_id, self.update_count
            )));
        }
        let grad: Vec<Vec<f64>> = self.own_slice(msg)?.into_iter().map(<[f64]>::to_vec).collect();
        let version = self.update_count;
        let lr = schedule.lr_at(version);
        self.step(&grad, lr)?;
        Ok(AsyncApply {
            version,
            staleness: version - read,
            lr,
        })
    }

    /// Applies the mean of exactly `expected` gradients tagged with the
    /// current iteration. Gradients are summed in worker-id order so the
    /// result does not depend on arrival order. Returns the rate used.
    pub fn sync_apply(
        &mut self,
        accepted: &[GradientMessage],
        expected: usize,
        schedule: &LrSchedule,
    ) -> Result<f64> {
        if accepted.len() != expected {
            return Err(Error::Protocol(format!(
                "shard {} asked to aggregate {} gradients, expected {expected}",
                self.shard_id,
                accepted.len()
            )));
        }
        self.apply_mean(accepted, schedule)
    }

    /// Mean-gradient apply over however many gradients were accepted (the
    /// timeout policy's divisor).
    pub fn apply_mean(&mut self, accepted: &[GradientMessage], schedule: &LrSchedule) -> Result<f64> {
        if accepted.is_empty() {
            return Err(Error::Protocol(format!(
                "shard {} cannot apply an empty aggregate",
                self.shard_id
            )));
        }
        let t = self.update_count;
        let mut order: Vec<&GradientMessage> = accepted.iter().collect();
        order.sort_by_key(|m| m.worker_id);
        if order.windows(2).any(|w| w[0].worker_id == w[1].worker_id) {
            return Err(Error::Protocol(format!(
                "shard {} iteration {t}: duplicate worker in aggregate",
                self.shard_id
            )));
        }
        let mut sum: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        for msg in order {
            if msg.iter_tag != Some(t) {
                return Err(Error::Protocol(format!(
                    "shard {} iteration {t}: gradient from worker {} tagged {:?}",
                    self.shard_id, msg.worker_id, msg.iter_tag
                )));
            }
            if msg.read_versions.get(self.shard_id) != Some(&t) {
                return Err(Error::Protocol(format!(
                    "shard {} iteration {t}: worker {} read a different version",
                    self.shard_id, msg.worker_id
                )));
            }
            for (s, g) in sum.iter_mut().zip(self.own_slice(msg)?) {
                for (a, b) in s.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / accepted.len() as f64;
        sum.iter_mut().flatten().for_each(|v| *v *= inv);
        let lr = schedule.lr_at(t);
        self.step(&sum, lr)?;
        Ok(lr)
    }
}

/// Reassembles full params from shard states (raw or EMA).
pub(crate) fn gather(shards: &[ShardState], template: &LayeredParams, ema: bool) -> LayeredParams {
    let mut out = template.clone();
    for s in shards {
        let slice = if ema { s.eval_slice() } else { &s.params };
        for (&l, values) in s.layers.iter().zip(slice) {
            out.layers_mut()[l].clone_from(values);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::sgd_step;
    use crate::tensor::LayeredGradient;

    fn msg(worker: usize, tag: Option<u64>, read: Vec<u64>, grad: Vec<Vec<f64>>) -> GradientMessage {
        GradientMessage {
            grad: LayeredGradient { layers: grad, batch_size: 1 },
            iter_tag: tag,
            worker_id: worker,
            read_versions: read,
            layer_read_times: vec![],
            layer_send_times: vec![],
        }
    }

    fn single_shard(values: Vec<f64>) -> ShardState {
        let p = LayeredParams::new(vec![values], 1).unwrap();
        ShardState::new(0, &p, &OptimizerConfig::default(), None).unwrap()
    }

    #[test]
    fn first_async_apply_steps_by_gamma0() {
        let mut s = single_shard(vec![1.0, 1.0]);
        let sched = LrSchedule::constant(0.5);
        let out = s.async_apply(&msg(0, None, vec![0], vec![vec![2.0, -2.0]]), &sched).unwrap();
        assert_eq!(s.update_count, 1);
        assert_eq!(s.params, vec![vec![0.0, 2.0]]);
        assert_eq!((out.version, out.staleness, out.lr), (0, 0, 0.5));
    }

    #[test]
    fn async_staleness_is_counter_difference() {
        let mut s = single_shard(vec![0.0]);
        s.update_count = 9;
        let out = s
            .async_apply(&msg(3, None, vec![5], vec![vec![1.0]]), &LrSchedule::constant(1.0))
            .unwrap();
        assert_eq!(out.staleness, 4);
        // Arrival order is apply order; nothing is rejected.
        let out = s
            .async_apply(&msg(1, None, vec![2], vec![vec![1.0]]), &LrSchedule::constant(1.0))
            .unwrap();
        assert_eq!((out.version, out.staleness), (10, 8));
        assert_eq!(s.update_count, 11);
    }

    #[test]
    fn sync_mean_of_two() {
        let mut s = single_shard(vec![0.0, 0.0]);
        let g = [
            msg(1, Some(0), vec![0], vec![vec![3.0, 5.0]]),
            msg(0, Some(0), vec![0], vec![vec![1.0, 3.0]]),
        ];
        s.sync_apply(&g, 2, &LrSchedule::constant(1.0)).unwrap();
        assert_eq!(s.params, vec![vec![-2.0, -4.0]]);
        assert!(s.sync_apply(&g[..1], 2, &LrSchedule::constant(1.0)).is_err());
    }

    #[test]
    fn sync_single_gradient_is_sgd_step() {
        let mut s = single_shard(vec![0.3, -0.7]);
        let g = vec![vec![0.11, 0.29]];
        let expected = sgd_step(&s.params, &g, 0.37).unwrap();
        s.sync_apply(&[msg(0, Some(0), vec![0], g)], 1, &LrSchedule::constant(0.37))
            .unwrap();
        assert_eq!(s.params, expected);
    }

    #[test]
    fn sync_rejects_wrong_tags() {
        let mut s = single_shard(vec![0.0]);
        let stale = [msg(0, Some(1), vec![1], vec![vec![1.0]])];
        assert!(s.sync_apply(&stale, 1, &LrSchedule::constant(1.0)).is_err());
        let dup = [
            msg(0, Some(0), vec![0], vec![vec![1.0]]),
            msg(0, Some(0), vec![0], vec![vec![1.0]]),
        ];
        assert!(s.sync_apply(&dup, 2, &LrSchedule::constant(1.0)).is_err());
    }

    #[test]
    fn shards_take_only_their_layers_and_update_ema() {
        let p = LayeredParams::new(vec![vec![1.0], vec![2.0], vec![3.0]], 2).unwrap();
        let mut shards = ShardState::partition(&p, &OptimizerConfig::default(), Some(0.5)).unwrap();
        assert_eq!(shards[0].layers, vec![0, 1]);
        let m = msg(0, None, vec![0, 0], vec![vec![1.0], vec![1.0], vec![1.0]]);
        shards[1].async_apply(&m, &LrSchedule::constant(1.0)).unwrap();
        assert_eq!(shards[1].params, vec![vec![2.0]]);
        assert_eq!(shards[1].eval_slice(), &[vec![2.5]]);
        assert_eq!(gather(&shards, &p, false).flat(), vec![1.0, 2.0, 2.0]);
        assert_eq!(gather(&shards, &p, true).flat(), vec![1.0, 2.0, 2.5]);
    }
}
