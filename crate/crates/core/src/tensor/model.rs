use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::params::{LayeredGradient, LayeredParams};
use crate::error::{invalid, shape, Result};

/// Deepest MLP we build: hand-written backprop stays auditable at this size.
pub const MAX_MLP_LAYERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `a` (and `z` for relu).
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Output head, fixed by the model kind and output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `½(z − y)²`
    Squared,
    /// Sigmoid cross-entropy on a single logit, labels 0/1.
    Binary,
    /// Softmax cross-entropy, integer labels.
    Softmax,
}

/// A small dense network. `layer_dims` lists widths from input to output;
/// parameter layer `l` maps width `layer_dims[l]` to `layer_dims[l + 1]` and
/// stores its weights row-major (`out × in`) followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Model {
    pub fn linear_regression(dim: usize) -> Result<Self> {
        Self::new(ModelKind::LinearRegression, vec![dim, 1], Activation::Tanh)
    }

    pub fn logistic_regression(dim: usize) -> Result<Self> {
        Self::new(ModelKind::LogisticRegression, vec![dim, 1], Activation::Tanh)
    }

    pub fn mlp(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        Self::new(ModelKind::Mlp, layer_dims, activation)
    }

    pub fn new(kind: ModelKind, layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        match kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                if layer_dims.len() != 2 || layer_dims[1] != 1 {
                    return Err(invalid("linear models have dims [d, 1]"));
                }
            }
            ModelKind::Mlp => {
                if layer_dims.len() < 2 || layer_dims.len() > MAX_MLP_LAYERS + 1 {
                    return Err(invalid(format!(
                        "an MLP has between 1 and {MAX_MLP_LAYERS} layers"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            layer_dims,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layer_dims
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    pub fn head(&self) -> Head {
        match self.kind {
            ModelKind::LinearRegression => Head::Squared,
            ModelKind::LogisticRegression => Head::Binary,
            ModelKind::Mlp if self.output_dim() == 1 => Head::Binary,
            ModelKind::Mlp => Head::Softmax,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.head() != Head::Squared
    }

    /// Zeros for the linear models, Glorot-uniform weights and zero biases for
    /// the MLP.
    pub fn init_params<R: Rng>(&self, num_shards: usize, rng: &mut R) -> Result<LayeredParams> {
        let layers = self
            .layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let mut layer = vec![0.0; fan_out * (fan_in + 1)];
                if self.kind == ModelKind::Mlp {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in &mut layer[..fan_out * fan_in] {
                        *v = rng.random_range(-limit..limit);
                    }
                }
                layer
            })
            .collect();
        LayeredParams::new(layers, num_shards)
    }

    pub fn check_params(&self, layers: &[Vec<f64>]) -> Result<()> {
        let sizes = self.layer_sizes();
        if layers.len() != sizes.len() || layers.iter().zip(&sizes).any(|(l, &n)| l.len() != n) {
            return Err(shape(format!(
                "params have layer sizes {:?}, model expects {sizes:?}",
                layers.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim() {
            return Err(shape(format!(
                "data has {} features, model expects {}",
                data.dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations and activations for every layer; the last activation
    /// entry holds the raw output logits.
    fn forward(&self, layers: &[Vec<f64>], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let depth = self.num_layers();
        let mut pre = Vec::with_capacity(depth);
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(x.to_vec());
        for (l, w) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let input = &acts[l];
            let bias = &w[fan_out * fan_in..];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            let a = if l + 1 < depth {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    fn point_loss(&self, logits: &[f64], y: f64) -> f64 {
        match self.head() {
            Head::Squared => 0.5 * (logits[0] - y).powi(2),
            Head::Binary => {
                let z = logits[0];
                z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
            }
            Head::Softmax => log_sum_exp(logits) - logits[y as usize],
        }
    }

    fn output_delta(&self, logits: &[f64], y: f64) -> Vec<f64> {
        match self.head() {
            Head::Squared => vec![logits[0] - y],
            Head::Binary => vec![sigmoid(logits[0]) - y],
            Head::Softmax => {
                let lse = log_sum_exp(logits);
                logits
                    .iter()
                    .enumerate()
                    .map(|(k, &z)| (z - lse).exp() - if k == y as usize { 1.0 } else { 0.0 })
                    .collect()
            }
        }
    }

    fn check_label(&self, y: f64) -> Result<()> {
        match self.head() {
            Head::Squared => Ok(()),
            Head::Binary if y == 0.0 || y == 1.0 => Ok(()),
            Head::Softmax if y >= 0.0 && y.fract() == 0.0 && (y as usize) < self.output_dim() => {
                Ok(())
            }
            _ => Err(invalid(format!("label {y} is invalid for this model"))),
        }
    }

    /// Mean per-example loss over the whole dataset.
    pub fn eval_loss(&self, params: &LayeredParams, data: &Dataset) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.eval_loss_on(params.layers(), data, &all)
    }

    /// Mean per-example loss over the given rows.
    pub fn eval_loss_on(&self, layers: &[Vec<f64>], data: &Dataset, rows: &[usize]) -> Result<f64> {
        self.check_params(layers)?;
        self.check_data(data)?;
        if rows.is_empty() {
            return Err(invalid("empty batch"));
        }
        let mut total = 0.0;
        for &i in rows {
            let y = data.target(i);
            self.check_label(y)?;
            let (_, acts) = self.forward(layers, data.row(i));
            total += self.point_loss(acts.last().expect("output layer"), y);
        }
        Ok(total / rows.len() as f64)
    }

    /// Gradient of the mean loss over the given rows (a mini-batch sampled by
    /// the caller, repeats allowed).
    pub fn eval_gradient(
        &self,
        params: &LayeredParams,
        data: &Dataset,
        rows: &[usize],
    ) -> Result<LayeredGradient> {
        self.gradient_on(params.layers(), data, rows)
    }

    pub fn gradient_on(
        &self,
        layers: &[Vec<f64>],
        data: &Dataset,
        rows: &[usize],
    ) -> Result<LayeredGradient> {
        self.check_params(layers)?;
        self.check_data(data)?;
        if rows.is_empty() {
            return Err(invalid("empty batch"));
        }
        let mut grad = LayeredGradient::zeros_like(&self.layer_sizes(), rows.len());
        let scale = 1.0 / rows.len() as f64;
        for &i in rows {
            let y = data.target(i);
            self.check_label(y)?;
            self.accumulate_point(layers, data.row(i), y, scale, &mut grad.layers);
        }
        Ok(grad)
    }

    fn accumulate_point(
        &self,
        layers: &[Vec<f64>],
        x: &[f64],
        y: f64,
        scale: f64,
        grad: &mut [Vec<f64>],
    ) {
        let (pre, acts) = self.forward(layers, x);
        let mut delta = self.output_delta(acts.last().expect("output layer"), y);
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let input = &acts[l];
            let g = &mut grad[l];
            for o in 0..fan_out {
                let d = delta[o] * scale;
                for (gw, a) in g[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *gw += d * a;
                }
                g[fan_out * fan_in + o] += d;
            }
            if l > 0 {
                let w = &layers[l];
                delta = (0..fan_in)
                    .map(|i| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        back * self.activation.derivative(pre[l - 1][i], input[i])
                    })
                    .collect();
            }
        }
    }

    pub fn predict_logits(&self, layers: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        let (_, mut acts) = self.forward(layers, x);
        acts.pop().expect("output layer")
    }

    /// Fraction of misclassified rows (classifiers only).
    pub fn error_rate(&self, params: &LayeredParams, data: &Dataset) -> Result<f64> {
        self.check_params(params.layers())?;
        self.check_data(data)?;
        if !self.is_classifier() {
            return Err(invalid("error rate is defined for classifiers only"));
        }
        let wrong = (0..data.len())
            .filter(|&i| {
                let z = self.predict_logits(params.layers(), data.row(i));
                let predicted = match self.head() {
                    Head::Binary => f64::from(u8::from(z[0] > 0.0)),
                    _ => argmax(&z) as f64,
                };
                predicted != data.target(i)
            })
            .count();
        Ok(wrong as f64 / data.len() as f64)
    }

    /// Error rate for classifiers, mean loss for regression.
    pub fn test_metric(&self, params: &LayeredParams, data: &Dataset) -> Result<f64> {
        if self.is_classifier() {
            self.error_rate(params, data)
        } else {
            self.eval_loss(params, data)
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
