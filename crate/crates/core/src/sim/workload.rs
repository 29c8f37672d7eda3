use crate::error::{invalid, Error, Result};
use crate::harness::{ExperimentConfig, ModelChoice};
use crate::protocol::{async_worker_step, sync_worker_step, GradientMessage, ReadSnapshot};
use crate::rng::{derive_rng, domain};
use crate::tensor::{Dataset, LayeredGradient, LayeredParams, Model, Split, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub train_loss: f64,
    pub test_metric: f64,
}

/// What the workers compute gradients of.
#[derive(Debug, Clone)]
pub enum Workload {
    Train {
        model: Model,
        train: Dataset,
        test: Dataset,
    },
    /// Layers without parameters: gradients are empty and nothing is
    /// evaluated, but every protocol event still happens.
    TimingOnly { layers: usize, n_train: usize },
}

impl Workload {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.model.kind == ModelChoice::TimingOnly {
            return Ok(Self::TimingOnly {
                layers: cfg.model.layers,
                n_train: cfg.data.n_train.max(1),
            });
        }
        let (train, test) = match (&cfg.data.train_csv, &cfg.data.test_csv) {
            (Some(tr), Some(te)) => (
                Dataset::from_csv(tr, Split::Train)?,
                Dataset::from_csv(te, Split::Test)?,
            ),
            (None, None) => SyntheticTask::new(
                cfg.data.task,
                cfg.data.dim,
                cfg.data.noise_or_default(),
                cfg.data.seed,
            )?
            .train_test(cfg.data.n_train, cfg.data.n_test)?,
            _ => return Err(invalid("train_csv and test_csv must be given together")),
        };
        let d = train.dim();
        let model = match cfg.model.kind {
            ModelChoice::LinearRegression => Model::linear_regression(d)?,
            ModelChoice::LogisticRegression => Model::logistic_regression(d)?,
            ModelChoice::Mlp => {
                let mut dims = vec![d];
                dims.extend(&cfg.model.hidden);
                dims.push(cfg.model.outputs);
                Model::mlp(dims, cfg.model.activation)?
            }
            ModelChoice::TimingOnly => unreachable!(),
        };
        Ok(Self::Train { model, train, test })
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Self::Train { .. })
    }

    pub fn model(&self) -> Option<&Model> {
        match self {
            Self::Train { model, .. } => Some(model),
            Self::TimingOnly { .. } => None,
        }
    }

    pub fn num_layers(&self) -> usize {
        match self {
            Self::Train { model, .. } => model.num_layers(),
            Self::TimingOnly { layers, .. } => *layers,
        }
    }

    pub fn train_len(&self) -> usize {
        match self {
            Self::Train { train, .. } => train.len(),
            Self::TimingOnly { n_train, .. } => *n_train,
        }
    }

    /// Initial parameters split over `num_shards`, drawn from the run seed.
    pub fn init_params(&self, num_shards: usize, seed: u64) -> Result<LayeredParams> {
        match self {
            Self::Train { model, .. } => {
                model.init_params(num_shards, &mut derive_rng(seed, &[domain::INIT]))
            }
            Self::TimingOnly { layers, .. } => LayeredParams::new(vec![Vec::new(); *layers], num_shards),
        }
    }

    pub fn gradient(&self, params: &LayeredParams, rows: &[usize]) -> Result<LayeredGradient> {
        match self {
            Self::Train { model, train, .. } => model.eval_gradient(params, train, rows),
            Self::TimingOnly { layers, .. } => Ok(LayeredGradient::zeros_like(&vec![0; *layers], rows.len())),
        }
    }

    pub fn evaluate(&self, params: &LayeredParams) -> Result<Option<Evaluation>> {
        match self {
            Self::Train { model, train, test } => Ok(Some(Evaluation {
                train_loss: model.eval_loss(params, train)?,
                test_metric: model.test_metric(params, test)?,
            })),
            Self::TimingOnly { .. } => Ok(None),
        }
    }
}

impl Workload {
    pub fn async_message(
        &self,
        snapshot: &ReadSnapshot,
        rows: &[usize],
        worker_id: usize,
        clip_norm: Option<f64>,
    ) -> Result<GradientMessage> {
        match self {
            Self::Train { model, train, .. } => {
                async_worker_step(snapshot, model, train, rows, worker_id, clip_norm)
            }
            Self::TimingOnly { .. } => Ok(self.empty_message(snapshot, rows, worker_id, None)),
        }
    }

    pub fn sync_message(
        &self,
        snapshot: &ReadSnapshot,
        t: u64,
        rows: &[usize],
        worker_id: usize,
    ) -> Result<GradientMessage> {
        match self {
            Self::Train { model, train, .. } => {
                sync_worker_step(snapshot, t, model, train, rows, worker_id)
            }
            Self::TimingOnly { .. } => {
                if snapshot.per_shard_version.iter().any(|&v| v != t) {
                    return Err(Error::Protocol(format!(
                        "worker {worker_id} read versions {:?} for iteration {t}",
                        snapshot.per_shard_version
                    )));
                }
                Ok(self.empty_message(snapshot, rows, worker_id, Some(t)))
            }
        }
    }

    fn empty_message(
        &self,
        snapshot: &ReadSnapshot,
        rows: &[usize],
        worker_id: usize,
        iter_tag: Option<u64>,
    ) -> GradientMessage {
        GradientMessage {
            grad: LayeredGradient::zeros_like(&vec![0; self.num_layers()], rows.len()),
            iter_tag,
            worker_id,
            read_versions: snapshot.per_shard_version.clone(),
            layer_read_times: Vec::new(),
            layer_send_times: Vec::new(),
        }
    }
}
