//! Central-difference gradient oracle.

use super::data::Dataset;
use super::model::Model;
use super::params::{split_flat, LayeredGradient, LayeredParams};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central differences of an arbitrary scalar function.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Coordinate-wise central differences of the mean batch loss.
pub fn finite_diff_gradient(
    model: &Model,
    params: &LayeredParams,
    data: &Dataset,
    rows: &[usize],
    h: f64,
) -> Result<LayeredGradient> {
    let sizes = params.layer_sizes();
    // Surface shape and batch errors before probing.
    model.eval_loss_on(params.layers(), data, rows)?;
    let flat = params.flat();
    let grad = central_difference(
        |x| {
            let layers = split_flat(x, &sizes).expect("same length as params");
            model
                .eval_loss_on(&layers, data, rows)
                .expect("validated above")
        },
        &flat,
        h,
    );
    Ok(LayeredGradient {
        layers: split_flat(&grad, &sizes)?,
        batch_size: rows.len(),
    })
}

/// `|a − b| / max(|a|, |b|)`, or 0 when the absolute gap is below `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let gap = (a - b).abs();
    if gap <= floor {
        0.0
    } else {
        gap / a.abs().max(b.abs())
    }
}

pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}
