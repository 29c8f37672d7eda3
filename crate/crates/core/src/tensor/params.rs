use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

/// Model parameters partitioned into layers, each layer owned by one
/// parameter-server shard.
///
/// Layer 0 is the bottom (input-side) layer. Shards own contiguous runs of
/// layers, so shard 0 always holds the bottom of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredParams {
    layers: Vec<Vec<f64>>,
    shard_map: Vec<usize>,
    num_shards: usize,
}

impl LayeredParams {
    /// Builds params with the default contiguous block assignment of layers
    /// to `num_shards` shards.
    pub fn new(layers: Vec<Vec<f64>>, num_shards: usize) -> Result<Self> {
        let shard_map = block_shard_map(layers.len(), num_shards)?;
        Ok(Self {
            layers,
            shard_map,
            num_shards,
        })
    }

    pub fn with_shard_map(layers: Vec<Vec<f64>>, shard_map: Vec<usize>) -> Result<Self> {
        if shard_map.len() != layers.len() {
            return Err(shape(format!(
                "shard map has {} entries for {} layers",
                shard_map.len(),
                layers.len()
            )));
        }
        let num_shards = shard_map.iter().copied().max().map_or(0, |m| m + 1);
        for j in 0..num_shards {
            if !shard_map.contains(&j) {
                return Err(invalid(format!("shard {j} owns no layer")));
            }
        }
        Ok(Self {
            layers,
            shard_map,
            num_shards,
        })
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Vec<f64>> {
        self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_shards(&self) -> usize {
        self.num_shards
    }

    pub fn shard_map(&self) -> &[usize] {
        &self.shard_map
    }

    pub fn shard_of(&self, layer: usize) -> usize {
        self.shard_map[layer]
    }

    /// Global indices of the layers owned by `shard`, bottom-up.
    pub fn shard_layers(&self, shard: usize) -> Vec<usize> {
        shard_layers(&self.shard_map, shard)
    }

    pub fn shard_slice(&self, shard: usize) -> Vec<Vec<f64>> {
        self.shard_layers(shard)
            .into_iter()
            .map(|l| self.layers[l].clone())
            .collect()
    }

    pub fn set_shard_slice(&mut self, shard: usize, slice: &[Vec<f64>]) -> Result<()> {
        let idx = self.shard_layers(shard);
        if idx.len() != slice.len() {
            return Err(shape(format!(
                "shard {shard} owns {} layers, slice has {}",
                idx.len(),
                slice.len()
            )));
        }
        for (l, values) in idx.into_iter().zip(slice) {
            if self.layers[l].len() != values.len() {
                return Err(shape(format!("layer {l} length mismatch")));
            }
            self.layers[l].clone_from(values);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flatten().copied().collect()
    }

    /// Rebuilds params of the same layer/shard shape from a flat vector.
    pub fn from_flat_like(&self, flat: &[f64]) -> Result<Self> {
        Ok(Self {
            layers: split_flat(flat, &self.layer_sizes())?,
            shard_map: self.shard_map.clone(),
            num_shards: self.num_shards,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, layers: &[Vec<f64>]) -> bool {
        same_shape(&self.layers, layers)
    }
}

/// A mini-batch gradient with the same layer structure as the params it was
/// computed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredGradient {
    pub layers: Vec<Vec<f64>>,
    pub batch_size: usize,
}

impl LayeredGradient {
    pub fn zeros_like(sizes: &[usize], batch_size: usize) -> Self {
        Self {
            layers: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            batch_size,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flatten().copied().collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }
}

pub(crate) fn same_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
}

pub fn split_flat(flat: &[f64], sizes: &[usize]) -> Result<Vec<Vec<f64>>> {
    let total: usize = sizes.iter().sum();
    if total != flat.len() {
        return Err(shape(format!(
            "flat vector has {} entries, layers need {total}",
            flat.len()
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &n in sizes {
        out.push(flat[offset..offset + n].to_vec());
        offset += n;
    }
    Ok(out)
}

/// Contiguous assignment: shard `j` owns layers `[j*L/M, (j+1)*L/M)`.
pub fn block_shard_map(num_layers: usize, num_shards: usize) -> Result<Vec<usize>> {
    if num_shards == 0 {
        return Err(invalid("at least one shard is required"));
    }
    if num_shards > num_layers {
        return Err(invalid(format!(
            "{num_shards} shards for {num_layers} layers; every shard must own a layer"
        )));
    }
    Ok((0..num_layers)
        .map(|l| l * num_shards / num_layers)
        .collect())
}

pub(crate) fn shard_layers(shard_map: &[usize], shard: usize) -> Vec<usize> {
    shard_map
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s == shard)
        .map(|(l, _)| l)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_map_is_contiguous_and_covers_all_shards() {
        assert_eq!(block_shard_map(5, 2).unwrap(), vec![0, 0, 0, 1, 1]);
        assert_eq!(block_shard_map(3, 3).unwrap(), vec![0, 1, 2]);
        assert!(block_shard_map(2, 3).is_err());
        assert!(block_shard_map(2, 0).is_err());
    }

    #[test]
    fn shard_slices_round_trip() {
        let mut p = LayeredParams::new(vec![vec![1.0], vec![2.0, 3.0], vec![4.0]], 2).unwrap();
        assert_eq!(p.shard_layers(0), vec![0, 1]);
        assert_eq!(p.shard_layers(1), vec![2]);
        p.set_shard_slice(0, &[vec![5.0], vec![6.0, 7.0]]).unwrap();
        assert_eq!(p.flat(), vec![5.0, 6.0, 7.0, 4.0]);
        assert!(p.set_shard_slice(0, &[vec![5.0]]).is_err());
    }

    #[test]
    fn explicit_shard_map_must_cover_every_shard() {
        assert!(LayeredParams::with_shard_map(vec![vec![0.0], vec![0.0]], vec![0, 2]).is_err());
        let p = LayeredParams::with_shard_map(vec![vec![0.0], vec![0.0]], vec![1, 0]).unwrap();
        assert_eq!(p.num_shards(), 2);
    }

    proptest! {
        #[test]
        fn split_then_concat_is_identity(
            sizes in proptest::collection::vec(0usize..6, 1..6),
            seed in any::<u64>(),
        ) {
            let total: usize = sizes.iter().sum();
            let flat: Vec<f64> = (0..total).map(|i| (seed.wrapping_add(i as u64) % 997) as f64 * 0.5).collect();
            let layers = split_flat(&flat, &sizes).unwrap();
            let p = LayeredParams::new(layers, 1).unwrap();
            prop_assert_eq!(p.flat(), flat.clone());
            let q = p.from_flat_like(&flat).unwrap();
            prop_assert_eq!(q, p);
        }
    }
}
