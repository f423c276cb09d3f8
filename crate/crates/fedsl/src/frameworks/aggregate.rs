//! Staleness-weighted federated averaging of device-side models.

use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// One client's contribution to an aggregation.
#[derive(Debug, Clone)]
pub struct Update {
    pub client: usize,
    pub params: ModelParams,
    pub sample_count: u64,
    /// Rounds elapsed since the base model this update was computed from.
    pub staleness: u64,
}

/// Down-weighting of stale updates: `(1 + tau)^(-a)`.
pub fn staleness_weight(tau: u64, exponent: f64) -> f64 {
    debug_assert!(exponent >= 0.0);
    (1.0 + tau as f64).powf(-exponent)
}

/// Weighted elementwise average with weights `n_i * s(tau_i)`, normalized.
///
/// Computed in delta-from-first form, `p_0 + sum_i w_i (p_i - p_0)`, so
/// aggregating identical models returns them bit for bit.
pub fn fedavg(updates: &[Update], staleness_exponent: f64) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::validation("fedavg: empty update set"));
    }
    if updates.iter().any(|u| u.sample_count == 0) {
        return Err(Error::validation("fedavg: zero sample count"));
    }
    let raw: Vec<f64> = updates
        .iter()
        .map(|u| u.sample_count as f64 * staleness_weight(u.staleness, staleness_exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric("fedavg: degenerate weight sum".into()));
    }

    let base = updates[0].params.clone();
    let mut out = base.clone();
    for (u, &w_raw) in updates.iter().zip(&raw).skip(1) {
        if u.params.dense.len() != base.dense.len() {
            return Err(Error::validation("fedavg: incongruent update shapes"));
        }
        let w = w_raw / total;
        for layer in 0..base.dense.len() {
            let bl = &base.dense[layer];
            let ul = &u.params.dense[layer];
            if ul.weights.shape() != bl.weights.shape() || ul.bias.shape() != bl.bias.shape() {
                return Err(Error::validation(format!(
                    "fedavg: shape mismatch at dense layer {layer}"
                )));
            }
            let ol = &mut out.dense[layer];
            for (i, o) in ol.weights.data_mut().iter_mut().enumerate() {
                *o += w * (ul.weights.data()[i] - bl.weights.data()[i]);
            }
            for (i, o) in ol.bias.data_mut().iter_mut().enumerate() {
                *o += w * (ul.bias.data()[i] - bl.bias.data()[i]);
            }
        }
    }
    Ok(out)
}
