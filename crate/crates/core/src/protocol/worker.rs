use crate::error::{Error, Result};
use crate::optim::clip_by_global_norm;
use crate::tensor::{Dataset, Model};

use super::message::{GradientMessage, ReadSnapshot};

/// Gradient of the mean loss over `rows` at a possibly inconsistent snapshot,
/// optionally clipped to `clip_norm` before sending.
pub fn async_worker_step(
    snapshot: &ReadSnapshot,
    model: &Model,
    data: &Dataset,
    rows: &[usize],
    worker_id: usize,
    clip_norm: Option<f64>,
) -> Result<GradientMessage> {
    let mut grad = model.eval_gradient(&snapshot.params, data, rows)?;
    if let Some(max) = clip_norm {
        grad = clip_by_global_norm(&grad, max)?;
    }
    Ok(GradientMessage {
        grad,
        iter_tag: None,
        worker_id,
        read_versions: snapshot.per_shard_version.clone(),
        layer_read_times: Vec::new(),
        layer_send_times: Vec::new(),
    })
}

/// Gradient for iteration `t`. The snapshot must have every shard at `t`.
pub fn sync_worker_step(
    snapshot: &ReadSnapshot,
    t: u64,
    model: &Model,
    data: &Dataset,
    rows: &[usize],
    worker_id: usize,
) -> Result<GradientMessage> {
    if snapshot.per_shard_version.iter().any(|&v| v != t) {
        return Err(Error::Protocol(format!(
            "worker {worker_id} read versions {:?} for iteration {t}",
            snapshot.per_shard_version
        )));
    }
    let grad = model.eval_gradient(&snapshot.params, data, rows)?;
    Ok(GradientMessage {
        grad,
        iter_tag: Some(t),
        worker_id,
        read_versions: snapshot.per_shard_version.clone(),
        layer_read_times: Vec::new(),
        layer_send_times: Vec::new(),
    })
}
