use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::tensor::{same_shape, LayeredGradient};

fn check(params: &[Vec<f64>], grad: &[Vec<f64>]) -> Result<()> {
    if same_shape(params, grad) {
        Ok(())
    } else {
        Err(shape("gradient shape differs from params"))
    }
}

/// `θ − lr·G`, returning a new value.
pub fn sgd_step(params: &[Vec<f64>], grad: &[Vec<f64>], lr: f64) -> Result<Vec<Vec<f64>>> {
    let mut out = params.to_vec();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut [Vec<f64>], grad: &[Vec<f64>], lr: f64) -> Result<()> {
    check(params, grad)?;
    for (p, g) in params.iter_mut().zip(grad) {
        for (x, d) in p.iter_mut().zip(g) {
            *x -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    RmspropMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_decay() -> f64 {
    0.9
}
fn default_momentum() -> f64 {
    0.9
}
fn default_epsilon() -> f64 {
    1e-10
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            decay: default_decay(),
            momentum: default_momentum(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimizerConfig {
    pub fn rmsprop() -> Self {
        Self {
            kind: OptimizerKind::RmspropMomentum,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == OptimizerKind::RmspropMomentum {
            if !(0.0..1.0).contains(&self.decay) {
                return Err(invalid("rmsprop decay must lie in [0, 1)"));
            }
            if !(0.0..1.0).contains(&self.momentum) {
                return Err(invalid("rmsprop momentum must lie in [0, 1)"));
            }
            if !(self.epsilon > 0.0) {
                return Err(invalid("rmsprop epsilon must be positive"));
            }
        }
        Ok(())
    }
}

/// RMSProp accumulators with momentum over the preconditioned step:
///
/// ```text
/// ms  ← d·ms + (1 − d)·G⊙G
/// mom ← m·mom + lr·G / √(ms + ε)
/// θ   ← θ − mom
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub ms: Vec<Vec<f64>>,
    pub mom: Vec<Vec<f64>>,
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
}

impl RmsPropState {
    pub fn zeros(sizes: &[usize], decay: f64, momentum: f64, epsilon: f64) -> Self {
        Self {
            ms: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            mom: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            decay,
            momentum,
            epsilon,
        }
    }

    fn step_in_place(&mut self, params: &mut [Vec<f64>], grad: &[Vec<f64>], lr: f64) -> Result<()> {
        check(params, grad)?;
        if !same_shape(params, &self.ms) {
            return Err(shape("rmsprop state shape differs from params"));
        }
        let (d, m, eps) = (self.decay, self.momentum, self.epsilon);
        for (((p, g), ms), mom) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.ms)
            .zip(&mut self.mom)
        {
            for i in 0..p.len() {
                ms[i] = d * ms[i] + (1.0 - d) * g[i] * g[i];
                mom[i] = m * mom[i] + lr * g[i] / (ms[i] + eps).sqrt();
                p[i] -= mom[i];
            }
        }
        Ok(())
    }
}

pub fn rmsprop_momentum_step(
    params: &[Vec<f64>],
    grad: &[Vec<f64>],
    state: &RmsPropState,
    lr: f64,
) -> Result<(Vec<Vec<f64>>, RmsPropState)> {
    let mut out = params.to_vec();
    let mut next = state.clone();
    next.step_in_place(&mut out, grad, lr)?;
    Ok((out, next))
}

/// Per-shard optimizer accumulator.
#[derive(Debug, Clone, PartialEq)]
pub enum OptState {
    Sgd,
    RmsProp(RmsPropState),
}

impl OptState {
    pub fn new(config: &OptimizerConfig, sizes: &[usize]) -> Self {
        match config.kind {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::RmspropMomentum => OptState::RmsProp(RmsPropState::zeros(
                sizes,
                config.decay,
                config.momentum,
                config.epsilon,
            )),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grad: &[Vec<f64>], lr: f64) -> Result<()> {
        match self {
            OptState::Sgd => sgd_step_in_place(params, grad, lr),
            OptState::RmsProp(state) => state.step_in_place(params, grad, lr),
        }
    }
}

/// Scales the whole gradient by `max_norm / ‖G‖₂` when the joint norm over
/// all layers exceeds `max_norm`.
pub fn clip_by_global_norm(grad: &LayeredGradient, max_norm: f64) -> Result<LayeredGradient> {
    if !(max_norm > 0.0) {
        return Err(invalid("max_norm must be positive"));
    }
    let norm = grad.global_norm();
    if norm <= max_norm {
        return Ok(grad.clone());
    }
    let scale = max_norm / norm;
    Ok(LayeredGradient {
        layers: grad
            .layers
            .iter()
            .map(|l| l.iter().map(|g| g * scale).collect())
            .collect(),
        batch_size: grad.batch_size,
    })
}
