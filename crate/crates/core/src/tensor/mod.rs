//! Parameter containers, synthetic data, small differentiable models and a
//! finite-difference gradient oracle.

mod data;
mod gradcheck;
mod model;
mod params;
mod sampling;

pub use data::{generate_synthetic, Dataset, Split, SyntheticTask, TaskKind};
pub use gradcheck::{
    central_difference, finite_diff_gradient, max_relative_error, relative_error, DEFAULT_STEP,
};
pub use model::{Activation, Head, Model, ModelKind, MAX_MLP_LAYERS};
pub use params::{block_shard_map, split_flat, LayeredGradient, LayeredParams};
pub use sampling::SamplingSchedule;

pub(crate) use params::same_shape;
