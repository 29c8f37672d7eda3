use crate::error::{invalid, shape, Error, Result};
use crate::tensor::{LayeredGradient, LayeredParams};

/// A worker's view of the model: every shard's slice together with the
/// update counter it was read at. Asynchronous snapshots may mix versions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadSnapshot {
    pub params: LayeredParams,
    pub per_shard_version: Vec<u64>,
}

impl ReadSnapshot {
    /// Builds a snapshot from one `(slice, version)` read per shard, where
    /// `slice` holds the shard's layers bottom-up.
    pub fn assemble(shard_map: &[usize], reads: Vec<(Vec<Vec<f64>>, u64)>) -> Result<Self> {
        let mut layers: Vec<Option<Vec<f64>>> = vec![None; shard_map.len()];
        let mut versions = Vec::with_capacity(reads.len());
        for (j, (slice, version)) in reads.into_iter().enumerate() {
            let owned: Vec<usize> = (0..shard_map.len()).filter(|&l| shard_map[l] == j).collect();
            if owned.len() != slice.len() {
                return Err(shape(format!(
                    "shard {j} owns {} layers but returned {}",
                    owned.len(),
                    slice.len()
                )));
            }
            for (l, values) in owned.into_iter().zip(slice) {
                layers[l] = Some(values);
            }
            versions.push(version);
        }
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(l, v)| v.ok_or_else(|| invalid(format!("no shard supplied layer {l}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: LayeredParams::with_shard_map(layers, shard_map.to_vec())?,
            per_shard_version: versions,
        })
    }

    /// True when every shard was read at the same version.
    pub fn is_consistent(&self) -> bool {
        self.per_shard_version.windows(2).all(|w| w[0] == w[1])
    }
}

/// A gradient on its way to the parameter servers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    pub grad: LayeredGradient,
    /// Iteration the gradient was computed for; `None` in asynchronous mode.
    pub iter_tag: Option<u64>,
    pub worker_id: usize,
    pub read_versions: Vec<u64>,
    pub layer_read_times: Vec<f64>,
    pub layer_send_times: Vec<f64>,
}

impl GradientMessage {
    /// Attaches per-layer timestamps. Reads run bottom-up during the forward
    /// pass and sends top-down during the backward pass, so read times must be
    /// nondecreasing and send times nonincreasing in the layer index.
    pub fn with_layer_times(mut self, reads: Vec<f64>, sends: Vec<f64>) -> Result<Self> {
        let layers = self.grad.layers.len();
        if reads.len() != layers || sends.len() != layers {
            return Err(shape(format!(
                "{} read and {} send times for {layers} layers",
                reads.len(),
                sends.len()
            )));
        }
        if reads.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Protocol("layer read times must be nondecreasing bottom-up".into()));
        }
        if sends.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Protocol("layer send times must be nonincreasing bottom-up".into()));
        }
        self.layer_read_times = reads;
        self.layer_send_times = sends;
        Ok(self)
    }
}
