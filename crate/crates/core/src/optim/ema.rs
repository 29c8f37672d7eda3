use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::tensor::same_shape;

/// Shadow parameters `θ̄ ← α·θ̄ + (1 − α)·θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub shadow: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl EmaState {
    pub fn new(initial: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("EMA decay {alpha} outside [0, 1]")));
        }
        Ok(Self {
            shadow: initial,
            alpha,
        })
    }

    pub fn update(&self, params: &[Vec<f64>]) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(params)?;
        Ok(next)
    }

    pub fn update_in_place(&mut self, params: &[Vec<f64>]) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("EMA decay {} outside [0, 1]", self.alpha)));
        }
        if !same_shape(&self.shadow, params) {
            return Err(shape("EMA shadow shape differs from params"));
        }
        let a = self.alpha;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (x, y) in s.iter_mut().zip(p) {
                *x = a * *x + (1.0 - a) * y;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_and_midpoint_cases() {
        let theta = vec![vec![2.0]];
        let e = EmaState::new(vec![vec![0.0]], 0.0).unwrap();
        assert_eq!(e.update(&theta).unwrap().shadow, theta);
        let e = EmaState::new(vec![vec![0.0]], 1.0).unwrap();
        assert_eq!(e.update(&theta).unwrap().shadow, vec![vec![0.0]]);
        let e = EmaState::new(vec![vec![0.0]], 0.5).unwrap();
        assert_eq!(e.update(&theta).unwrap().shadow, vec![vec![1.0]]);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        assert!(EmaState::new(vec![vec![0.0]], 1.5).is_err());
        assert!(EmaState::new(vec![vec![0.0]], -0.1).is_err());
        let bad = EmaState { shadow: vec![vec![0.0]], alpha: 2.0 };
        assert!(bad.update(&[vec![1.0]]).is_err());
    }

    #[test]
    fn gap_shrinks_by_alpha_each_step() {
        let theta = vec![vec![3.0, -1.0]];
        let mut e = EmaState::new(vec![vec![0.0, 0.0]], 0.9).unwrap();
        let mut gap = [3.0, -1.0];
        for _ in 0..50 {
            e.update_in_place(&theta).unwrap();
            for (g, (s, t)) in gap.iter_mut().zip(e.shadow[0].iter().zip(&theta[0])) {
                *g *= 0.9;
                assert!(((t - s) - *g).abs() < 1e-12);
            }
        }
    }
}
