use std::collections::VecDeque;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::optim::OptState;
use crate::tensor::{Dataset, Model};

use super::schedule::StalenessSchedule;

/// The last `capacity` parameter snapshots, newest last, each with the step
/// index it was taken at.
#[derive(Debug, Clone)]
pub struct ParamHistory {
    capacity: usize,
    snapshots: VecDeque<(u64, Vec<Vec<f64>>)>,
}

impl ParamHistory {
    pub fn new(capacity: usize, step: u64, params: Vec<Vec<f64>>) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("history capacity must be positive"));
        }
        let mut snapshots = VecDeque::with_capacity(capacity);
        snapshots.push_back((step, params));
        Ok(Self { capacity, snapshots })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn latest(&self) -> (u64, &[Vec<f64>]) {
        let (s, p) = self.snapshots.back().expect("history is never empty");
        (*s, p)
    }

    pub fn push(&mut self, step: u64, params: Vec<Vec<f64>>) {
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back((step, params));
    }

    /// The snapshot `staleness` steps back, clamped to the oldest one kept.
    /// Returns it with the staleness actually realized.
    pub fn lookback(&self, staleness: u64) -> (&[Vec<f64>], u64) {
        let back = (staleness as usize).min(self.snapshots.len() - 1);
        let (_, p) = &self.snapshots[self.snapshots.len() - 1 - back];
        (p, back as u64)
    }
}

/// One serial step with injected staleness: the gradient is taken at
/// `θ⁽ᵗ⁻ˢ⁾` and applied to `θ⁽ᵗ⁾`, the newest snapshot. `epoch` (data passes)
/// drives the ramp. Returns the realized staleness.
#[allow(clippy::too_many_arguments)]
pub fn stale_step<R: Rng + ?Sized>(
    history: &mut ParamHistory,
    schedule: &StalenessSchedule,
    epoch: f64,
    model: &Model,
    data: &Dataset,
    rows: &[usize],
    optimizer: &mut OptState,
    lr: f64,
    rng: &mut R,
) -> Result<u64> {
    let requested = schedule.sample(epoch, rng);
    let (old, realized) = history.lookback(requested);
    let grad = model.gradient_on(old, data, rows)?;
    let (step, current) = history.latest();
    let mut next = current.to_vec();
    optimizer.step(&mut next, &grad.layers, lr)?;
    history.push(step + 1, next);
    Ok(realized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{sgd_step, OptimizerConfig};
    use crate::rng::derive_rng;
    use crate::staleness::StalenessDistribution;
    use crate::tensor::{generate_synthetic, SamplingSchedule, TaskKind};

    fn fixed(s: f64) -> StalenessSchedule {
        StalenessSchedule {
            target_mean: s,
            ramp_epochs: 0.0,
            distribution: StalenessDistribution::Fixed,
        }
    }

    #[test]
    fn lookback_clamps_to_oldest() {
        let mut h = ParamHistory::new(3, 0, vec![vec![0.0]]).unwrap();
        for t in 1..=5 {
            h.push(t, vec![vec![t as f64]]);
        }
        assert_eq!(h.len(), 3);
        assert_eq!(h.lookback(0), (&[vec![5.0]][..], 0));
        assert_eq!(h.lookback(1), (&[vec![4.0]][..], 1));
        assert_eq!(h.lookback(10), (&[vec![3.0]][..], 2));
    }

    #[test]
    fn zero_staleness_is_plain_sgd_bit_for_bit() {
        let data = generate_synthetic(TaskKind::Regression, 50, 3, 2).unwrap();
        let model = Model::linear_regression(3).unwrap();
        let sampling = SamplingSchedule::new(4);
        let init = vec![vec![0.1, -0.2, 0.3, 0.0]];
        let mut h = ParamHistory::new(1, 0, init.clone()).unwrap();
        let mut opt = OptState::new(&OptimizerConfig::default(), &[4]);
        let mut rng = derive_rng(0, &[]);
        let mut plain = init;
        for t in 0..30 {
            let rows = sampling.iteration(t, 5, data.len());
            let s = stale_step(&mut h, &fixed(0.0), 0.0, &model, &data, &rows, &mut opt, 0.05, &mut rng)
                .unwrap();
            assert_eq!(s, 0);
            let g = model.gradient_on(&plain, &data, &rows).unwrap();
            plain = sgd_step(&plain, &g.layers, 0.05).unwrap();
            assert_eq!(h.latest().1, &plain[..]);
        }
    }

    #[test]
    fn staleness_one_unrolled() {
        let data = generate_synthetic(TaskKind::Regression, 20, 2, 5).unwrap();
        let model = Model::linear_regression(2).unwrap();
        let rows: Vec<usize> = (0..20).collect();
        let mut h = ParamHistory::new(2, 0, vec![vec![0.5, 0.5, 0.5]]).unwrap();
        let mut opt = OptState::new(&OptimizerConfig::default(), &[3]);
        let mut rng = derive_rng(0, &[]);
        let lr = 0.1;
        // Step 0 has no older snapshot, so staleness clamps to 0.
        let s0 = stale_step(&mut h, &fixed(1.0), 0.0, &model, &data, &rows, &mut opt, lr, &mut rng).unwrap();
        assert_eq!(s0, 0);
        let theta0 = h.lookback(1).0.to_vec();
        let theta1 = h.latest().1.to_vec();
        let s1 = stale_step(&mut h, &fixed(1.0), 0.0, &model, &data, &rows, &mut opt, lr, &mut rng).unwrap();
        assert_eq!(s1, 1);
        let g0 = model.gradient_on(&theta0, &data, &rows).unwrap();
        let expect = sgd_step(&theta1, &g0.layers, lr).unwrap();
        assert_eq!(h.latest().1, &expect[..]);
    }

    #[test]
    fn realized_staleness_bounded_by_history() {
        let data = generate_synthetic(TaskKind::Regression, 20, 2, 5).unwrap();
        let model = Model::linear_regression(2).unwrap();
        let sched = StalenessSchedule {
            target_mean: 30.0,
            ramp_epochs: 0.0,
            distribution: StalenessDistribution::UniformInteger,
        };
        let mut h = ParamHistory::new(8, 0, vec![vec![0.0; 3]]).unwrap();
        let mut opt = OptState::new(&OptimizerConfig::default(), &[3]);
        let mut rng = derive_rng(9, &[]);
        for _ in 0..200 {
            let s = stale_step(&mut h, &sched, 1.0, &model, &data, &[0, 1], &mut opt, 0.01, &mut rng).unwrap();
            assert!(s < 8);
        }
    }
}
