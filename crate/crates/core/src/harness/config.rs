use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{LrSchedule, OptimizerConfig, ScheduleKind};
use crate::protocol::TimeoutPolicy;
use crate::sim::{LatencyModel, TimingProfile};
use crate::staleness::StalenessConfig;
use crate::tensor::{Activation, TaskKind};

use super::convergence::ConvergenceCriterion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Async,
    #[default]
    Sync,
    Serial,
    SerialStale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Sim,
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    LinearRegression,
    #[default]
    LogisticRegression,
    Mlp,
    /// Parameter-free layers: the protocol and its timing run, nothing is
    /// learned. For staleness and straggler studies on deep layer stacks.
    TimingOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelChoice,
    /// Hidden widths (mlp only).
    pub hidden: Vec<usize>,
    /// Output width (mlp only); 1 gives a binary head, more a softmax head.
    pub outputs: usize,
    pub activation: Activation,
    /// Layer count (timing-only only).
    pub layers: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelChoice::LogisticRegression,
            hidden: Vec::new(),
            outputs: 1,
            activation: Activation::Tanh,
            layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub task: TaskKind,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Task default when absent.
    pub noise: Option<f64>,
    /// Fixes the ground truth and the sampled rows independently of the run
    /// seed, so seed sweeps vary only the training randomness.
    pub seed: u64,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            task: TaskKind::Classification,
            dim: 10,
            n_train: 1000,
            n_test: 500,
            noise: None,
            seed: 0,
            train_csv: None,
            test_csv: None,
        }
    }
}

impl DataSpec {
    pub fn noise_or_default(&self) -> f64 {
        self.noise.unwrap_or(match self.task {
            TaskKind::Regression => 0.1,
            TaskKind::Classification => 1.0,
            TaskKind::Xor => 0.05,
        })
    }
}

/// The schedule as written in a config: `workers_n` and `batches_per_epoch`
/// are filled in from the protocol and data size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub gamma0: f64,
    pub beta: f64,
    /// Data passes.
    pub anneal_start: f64,
    pub anneal_end: f64,
    pub scale_with_n: bool,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        let d = LrSchedule::default();
        Self {
            kind: d.kind,
            gamma0: d.gamma0,
            beta: d.beta,
            anneal_start: d.anneal_start,
            anneal_end: d.anneal_end,
            scale_with_n: d.scale_with_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectionPolicy {
    /// Aggregate the first N gradients, drop the rest.
    #[default]
    Backup,
    /// Aggregate whatever arrived by a deadline.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionSpec {
    pub policy: CollectionPolicy,
    pub deadline: f64,
    pub n_min: usize,
    pub max_retries: u32,
}

impl Default for CollectionSpec {
    fn default() -> Self {
        let t = TimeoutPolicy::default();
        Self {
            policy: CollectionPolicy::Backup,
            deadline: t.deadline,
            n_min: t.n_min,
            max_retries: t.max_retries,
        }
    }
}

impl CollectionSpec {
    pub fn timeout_policy(&self) -> TimeoutPolicy {
        TimeoutPolicy {
            deadline: self.deadline,
            n_min: self.n_min,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeSpec {
    /// Real seconds slept per sampled latency second; 0 disables artificial
    /// delays.
    pub delay_scale: f64,
    /// Abort when no protocol event happens for this long (seconds).
    pub quiet_period_s: f64,
}

impl Default for RuntimeSpec {
    fn default() -> Self {
        Self {
            delay_scale: 0.0,
            quiet_period_s: 30.0,
        }
    }
}

/// A complete, strictly parsed run description.
///
/// Epochs follow the synchronous-iteration convention: one epoch is `N·B`
/// training examples, i.e. one synchronous iteration or `N` asynchronous
/// updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub backend: Backend,
    pub seed: u64,
    pub workers_n: usize,
    pub backups_b: usize,
    pub shards_m: usize,
    pub batch_b: usize,
    pub max_epochs: f64,
    pub eval_every: f64,
    /// EMA decay for evaluation parameters; 0 evaluates the raw parameters.
    pub ema_alpha: f64,
    /// Global-norm clip applied by asynchronous workers before sending.
    pub clip_norm: Option<f64>,
    /// Simulated seconds a shard spends on each apply.
    pub apply_overhead: f64,
    /// Independent restarts per sweep point; the best final metric is kept.
    pub restarts: usize,
    /// Record the full event trace.
    pub record_trace: bool,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleSpec,
    pub latency: LatencyModel,
    pub timing: TimingProfile,
    pub collection: CollectionSpec,
    pub staleness: StalenessConfig,
    pub runtime: RuntimeSpec,
    pub convergence: ConvergenceCriterion,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Sync,
            backend: Backend::Sim,
            seed: 0,
            workers_n: 1,
            backups_b: 0,
            shards_m: 1,
            batch_b: 8,
            max_epochs: 10.0,
            eval_every: 1.0,
            ema_alpha: 0.99,
            clip_norm: None,
            apply_overhead: 0.0,
            restarts: 1,
            record_trace: true,
            model: ModelSpec::default(),
            data: DataSpec::default(),
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleSpec::default(),
            latency: LatencyModel::default(),
            timing: TimingProfile::default(),
            collection: CollectionSpec::default(),
            staleness: StalenessConfig::default(),
            runtime: RuntimeSpec::default(),
            convergence: ConvergenceCriterion::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative data and latency paths are
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.data.train_csv,
                &mut cfg.data.test_csv,
                &mut cfg.latency.samples_file,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved config, every default spelled out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parameter layers of the configured model.
    pub fn num_layers(&self) -> usize {
        match self.model.kind {
            ModelChoice::LinearRegression | ModelChoice::LogisticRegression => 1,
            ModelChoice::Mlp => self.model.hidden.len() + 1,
            ModelChoice::TimingOnly => self.model.layers,
        }
    }

    /// Total workers started (`N + b`).
    pub fn total_workers(&self) -> usize {
        self.workers_n + self.backups_b
    }

    pub fn ema(&self) -> Option<f64> {
        (self.ema_alpha > 0.0).then_some(self.ema_alpha)
    }

    /// Examples consumed per epoch.
    pub fn examples_per_epoch(&self) -> usize {
        match self.protocol {
            Protocol::Sync | Protocol::Async => self.workers_n * self.batch_b,
            Protocol::Serial | Protocol::SerialStale => self.batch_b,
        }
    }

    /// The learning-rate schedule for a training set of `n_train` rows. The
    /// schedule's step index is the synchronous iteration in sync mode, the
    /// shard's own update count in async mode, and the step in serial modes.
    pub fn lr_schedule(&self, n_train: usize) -> LrSchedule {
        let workers_n = match self.protocol {
            Protocol::Sync => self.workers_n,
            _ => 1,
        };
        let s = &self.schedule;
        LrSchedule {
            kind: s.kind,
            gamma0: s.gamma0,
            beta: s.beta,
            workers_n,
            batches_per_epoch: (n_train as f64 / self.batch_b as f64).max(1.0),
            anneal_start: s.anneal_start,
            anneal_end: s.anneal_end,
            scale_with_n: s.scale_with_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(config_err(m));
        if self.workers_n < 1 {
            return fail("workers_n must be at least 1");
        }
        if self.backups_b > 0 && self.protocol != Protocol::Sync {
            return fail("backups_b must be 0 unless protocol = \"sync\"");
        }
        if matches!(self.protocol, Protocol::Serial | Protocol::SerialStale) && self.workers_n != 1 {
            return fail("serial protocols run a single worker (workers_n = 1)");
        }
        if self.shards_m < 1 {
            return fail("shards_m must be at least 1");
        }
        if self.batch_b < 1 {
            return fail("batch_b must be at least 1");
        }
        if !(self.max_epochs > 0.0 && self.max_epochs.is_finite()) {
            return fail("max_epochs must be positive");
        }
        if !(self.eval_every > 0.0 && self.eval_every.is_finite()) {
            return fail("eval_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return fail("ema_alpha must lie in [0, 1]");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail("clip_norm must be positive");
            }
        }
        if !(self.apply_overhead >= 0.0 && self.apply_overhead.is_finite()) {
            return fail("apply_overhead must be non-negative");
        }
        if self.restarts < 1 {
            return fail("restarts must be at least 1");
        }
        let layers = self.num_layers();
        match self.model.kind {
            ModelChoice::Mlp => {
                if self.model.hidden.contains(&0) || self.model.outputs == 0 {
                    return fail("mlp widths must be positive");
                }
                if layers > crate::tensor::MAX_MLP_LAYERS {
                    return Err(config_err(format!(
                        "mlp has {layers} layers; at most {} are supported",
                        crate::tensor::MAX_MLP_LAYERS
                    )));
                }
            }
            ModelChoice::TimingOnly if self.model.layers == 0 => {
                return fail("timing-only model needs at least one layer");
            }
            _ => {}
        }
        if self.shards_m > layers {
            return Err(config_err(format!(
                "shards_m = {} exceeds the model's {layers} layers",
                self.shards_m
            )));
        }
        if self.data.train_csv.is_none() {
            if self.data.dim == 0 || self.data.n_train < 2 || self.data.n_test < 2 {
                return fail("synthetic data needs dim >= 1 and at least 2 train and test rows");
            }
            if !(self.data.noise_or_default() >= 0.0) {
                return fail("data noise must be non-negative");
            }
        }
        let wrap = |e: Error| config_err(e.to_string());
        self.optimizer.validate().map_err(wrap)?;
        self.lr_schedule(self.data.n_train.max(1)).validate().map_err(wrap)?;
        self.latency.validate().map_err(wrap)?;
        self.timing.validate(layers).map_err(wrap)?;
        if self.collection.policy == CollectionPolicy::Timeout {
            if self.protocol != Protocol::Sync {
                return fail("timeout collection applies to protocol = \"sync\" only");
            }
            self.collection.timeout_policy().validate().map_err(wrap)?;
        }
        self.staleness.validate().map_err(wrap)?;
        self.convergence.validate().map_err(wrap)?;
        if !(self.runtime.delay_scale >= 0.0 && self.runtime.quiet_period_s > 0.0) {
            return fail("runtime delay_scale must be >= 0 and quiet_period_s > 0");
        }
        Ok(())
    }
}
