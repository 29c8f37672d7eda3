use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How a worker's sampled step duration `D` divides into per-layer forward,
/// backward and send costs.
///
/// The `forward` and `backward` fractions of `D` are spread over the layers
/// in proportion to `layer_weights` (uniform when empty). Each layer's
/// gradient send then takes `comm · D`. Fractions are normalized to sum to
/// one, so the bottom layer's gradient always arrives exactly `D` after the
/// step starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingProfile {
    pub forward: f64,
    pub backward: f64,
    pub comm: f64,
    pub layer_weights: Vec<f64>,
}

impl Default for TimingProfile {
    fn default() -> Self {
        Self {
            forward: 0.4,
            backward: 0.4,
            comm: 0.2,
            layer_weights: Vec::new(),
        }
    }
}

/// Absolute per-layer costs for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCosts {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub comm: Vec<f64>,
}

impl TimingProfile {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let parts = [self.forward, self.backward, self.comm];
        if parts.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(invalid("timing fractions must be finite and non-negative"));
        }
        if parts.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("timing fractions must not all be zero"));
        }
        if !self.layer_weights.is_empty() {
            if self.layer_weights.len() != num_layers {
                return Err(invalid(format!(
                    "{} layer weights for {num_layers} layers",
                    self.layer_weights.len()
                )));
            }
            if self.layer_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(invalid("layer weights must be positive"));
            }
        }
        Ok(())
    }

    pub fn layer_costs(&self, duration: f64, num_layers: usize) -> LayerCosts {
        let total = self.forward + self.backward + self.comm;
        let weights: Vec<f64> = if self.layer_weights.is_empty() {
            vec![1.0; num_layers]
        } else {
            self.layer_weights.clone()
        };
        let wsum: f64 = weights.iter().sum();
        let per = |frac: f64| -> Vec<f64> {
            weights
                .iter()
                .map(|w| duration * frac / total * w / wsum)
                .collect()
        };
        LayerCosts {
            forward: per(self.forward),
            backward: per(self.backward),
            comm: vec![duration * self.comm / total; num_layers],
        }
    }
}

/// Per-layer `(read_time, send_time)` for a step starting at `start`:
/// layer `l` is read after the forward pass through layers below it, and its
/// gradient is sent once the backward pass has come down through it.
pub fn layer_event_times(costs: &LayerCosts, start: f64) -> Vec<(f64, f64)> {
    let n = costs.forward.len();
    let total_forward: f64 = costs.forward.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut read = start;
    for l in 0..n {
        let backward_through: f64 = costs.backward[l..].iter().sum();
        out.push((read, start + total_forward + backward_through + costs.comm[l]));
        read += costs.forward[l];
    }
    out
}
