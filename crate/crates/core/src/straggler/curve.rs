use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Iterations to converge as a function of the number of aggregated
/// gradients, linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationsCurve {
    samples: Vec<(usize, f64)>,
}

impl IterationsCurve {
    pub fn new(samples: Vec<(usize, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid("an iterations curve needs at least two samples"));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(invalid(format!(
                    "curve N values must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if samples.iter().any(|s| !(s.1 > 0.0 && s.1.is_finite())) {
            return Err(invalid("curve iteration counts must be positive"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(usize, f64)] {
        &self.samples
    }

    pub fn min_n(&self) -> usize {
        self.samples[0].0
    }

    pub fn max_n(&self) -> usize {
        self.samples[self.samples.len() - 1].0
    }

    /// Interpolated value at `n`; outside the sampled range is an error.
    pub fn at(&self, n: usize) -> Result<f64> {
        if n < self.min_n() || n > self.max_n() {
            return Err(invalid(format!(
                "N = {n} outside the curve's range [{}, {}]",
                self.min_n(),
                self.max_n()
            )));
        }
        let i = self.samples.partition_point(|s| s.0 < n);
        let (n1, y1) = self.samples[i];
        if n1 == n {
            return Ok(y1);
        }
        let (n0, y0) = self.samples[i - 1];
        let f = (n - n0) as f64 / (n1 - n0) as f64;
        Ok(y0 + f * (y1 - y0))
    }
}
