//! Model partitioning across tiers and smashed-data payload accounting.

use crate::error::{Error, Result};
use crate::nn::{self, ForwardCache, Gradients, LayerKind, ModelParams, ModelSpec};
use crate::tensor::Tensor;

/// Tier a segment is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Device,
    Server,
    Edge,
    Cloud,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Device => "device",
            Tier::Server => "server",
            Tier::Edge => "edge",
            Tier::Cloud => "cloud",
        }
    }
}

/// Cut indices: cut `c` places layers `[0, c)` on the lower tier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    cuts: Vec<usize>,
}

impl SplitPlan {
    /// Builds a plan with 0, 1, or 2 strictly increasing positive cuts.
    pub fn new(cuts: Vec<usize>) -> Result<Self> {
        if cuts.len() > 2 {
            return Err(Error::validation("a split plan has at most 2 cuts"));
        }
        for w in cuts.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::validation("cuts must be strictly increasing"));
            }
        }
        if cuts.iter().any(|&c| c == 0) {
            return Err(Error::validation("cut index 0 is not a valid boundary"));
        }
        Ok(SplitPlan { cuts })
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    /// Tier labels implied by the cut count.
    pub fn tier_names(&self) -> Vec<Tier> {
        match self.cuts.len() {
            0 => vec![Tier::Device],
            1 => vec![Tier::Device, Tier::Server],
            _ => vec![Tier::Device, Tier::Edge, Tier::Cloud],
        }
    }

    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        for &c in &self.cuts {
            if c >= spec.layer_count() {
                return Err(Error::validation(format!(
                    "cut {} out of range for {}-layer model",
                    c,
                    spec.layer_count()
                )));
            }
        }
        Ok(())
    }
}

/// A contiguous slice of the model owned by one tier.
#[derive(Debug, Clone)]
pub struct Segment {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub tier: Tier,
}

/// Splits a model into per-tier segments; parameters are moved, not shared.
pub fn partition(spec: &ModelSpec, params: &ModelParams, plan: &SplitPlan) -> Result<Vec<Segment>> {
    plan.validate_for(spec)?;
    let tiers = plan.tier_names();
    let mut bounds = vec![0usize];
    bounds.extend_from_slice(plan.cuts());
    bounds.push(spec.layer_count());

    let mut segments = Vec::new();
    let mut dense_cursor = 0usize;
    for (ti, w) in bounds.windows(2).enumerate() {
        let sub = spec.slice(w[0], w[1])?;
        let n_dense = sub
            .layers()
            .iter()
            .filter(|l| l.kind == LayerKind::Dense)
            .count();
        let dense = params.dense[dense_cursor..dense_cursor + n_dense].to_vec();
        dense_cursor += n_dense;
        segments.push(Segment {
            spec: sub,
            params: ModelParams { dense },
            tier: tiers[ti],
        });
    }
    debug_assert_eq!(dense_cursor, params.dense.len());
    Ok(segments)
}

/// Concatenates segments back into one model; inverse of `partition`.
pub fn reassemble(segments: &[Segment]) -> Result<(ModelSpec, ModelParams)> {
    if segments.is_empty() {
        return Err(Error::validation("reassemble: no segments"));
    }
    let mut layers = Vec::new();
    let mut dense = Vec::new();
    for seg in segments {
        layers.extend_from_slice(seg.spec.layers());
        dense.extend(seg.params.dense.iter().cloned());
    }
    Ok((ModelSpec::new(layers)?, ModelParams { dense }))
}

/// Forward through one segment; semantics identical to the monolithic
/// forward restricted to the slice.
pub fn segment_forward(seg: &Segment, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
    nn::forward(&seg.spec, &seg.params, input)
}

/// Backward through one segment. `grad_in` is the cut-layer gradient sent
/// down-tier; `grads` cover only this segment's parameters.
pub fn segment_backward(
    seg: &Segment,
    cache: &ForwardCache,
    grad_out: &Tensor,
) -> Result<(Gradients, Tensor)> {
    nn::backward(&seg.spec, &seg.params, cache, grad_out)
}

/// Smashed-data (or cut-gradient) payload in bits for one direction.
pub fn smashed_payload_bits(
    spec: &ModelSpec,
    cut: usize,
    batch: usize,
    precision_bits: u32,
) -> Result<u64> {
    if precision_bits == 0 || precision_bits > 64 {
        return Err(Error::validation("precision must be in [1, 64] bits"));
    }
    if batch == 0 {
        return Err(Error::validation("batch must be positive"));
    }
    let width = spec.width_at_cut(cut)?;
    Ok(batch as u64 * width as u64 * precision_bits as u64)
}

/// Payload bits at every cut of a plan, lower boundary first.
pub fn plan_payload_bits(
    plan: &SplitPlan,
    spec: &ModelSpec,
    batch: usize,
    precision_bits: u32,
) -> Result<Vec<u64>> {
    plan.cuts()
        .iter()
        .map(|&c| smashed_payload_bits(spec, c, batch, precision_bits))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, LayerSpec};
    use crate::rng::RngStream;

    fn random_input(seed: u64, batch: usize, dim: usize) -> Tensor {
        let mut s = RngStream::new(seed, "split.x").unwrap();
        Tensor::new(vec![batch, dim], (0..batch * dim).map(|_| s.normal()).collect()).unwrap()
    }

    #[test]
    fn four_layer_model_splits_two_two() {
        let spec = ModelSpec::new(vec![
            LayerSpec::dense(4, 5),
            LayerSpec::relu(5),
            LayerSpec::dense(5, 5),
            LayerSpec::dense(5, 3),
        ])
        .unwrap();
        let params = init_params(&spec, 1);
        let plan = SplitPlan::new(vec![2]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].spec.layer_count(), 2);
        assert_eq!(segs[1].spec.layer_count(), 2);
        assert_eq!(segs[0].tier, Tier::Device);
        assert_eq!(segs[1].tier, Tier::Server);
    }

    #[test]
    fn sixteen_layer_profile_three_tiers() {
        // Cuts (3, 7) on a 16-layer stack: tiers of 3, 4, and 9 layers.
        let mut layers = vec![LayerSpec::dense(8, 8)];
        for _ in 0..15 {
            layers.push(LayerSpec::dense(8, 8));
        }
        let spec = ModelSpec::new(layers).unwrap();
        let params = init_params(&spec, 2);
        let plan = SplitPlan::new(vec![3, 7]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        let counts: Vec<usize> = segs.iter().map(|s| s.spec.layer_count()).collect();
        assert_eq!(counts, vec![3, 4, 9]);
        assert_eq!(
            segs.iter().map(|s| s.tier).collect::<Vec<_>>(),
            vec![Tier::Device, Tier::Edge, Tier::Cloud]
        );
    }

    #[test]
    fn partition_round_trips_bitwise() {
        let spec = ModelSpec::mlp(6, &[8, 4], 3).unwrap();
        let params = init_params(&spec, 3);
        let plan = SplitPlan::new(vec![1]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        let (spec2, params2) = reassemble(&segs).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params, params2);
    }

    #[test]
    fn invalid_cuts_rejected() {
        let spec = ModelSpec::mlp(4, &[4], 2).unwrap(); // 3 layers
        let params = init_params(&spec, 0);
        assert!(SplitPlan::new(vec![0]).is_err());
        assert!(SplitPlan::new(vec![2, 2]).is_err());
        let too_far = SplitPlan::new(vec![3]).unwrap();
        assert!(partition(&spec, &params, &too_far).is_err());
    }

    #[test]
    fn device_segment_identity_relu() {
        let spec = ModelSpec::new(vec![LayerSpec::dense(2, 2), LayerSpec::relu(2)]).unwrap();
        let mut params = init_params(&spec, 0);
        params.dense[0].weights = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        params.dense[0].bias = Tensor::zeros(vec![2]);
        let plan = SplitPlan::new(vec![]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        let x = Tensor::from_rows(&[vec![-2.0, 5.0]]).unwrap();
        let (y, _) = segment_forward(&segs[0], &x).unwrap();
        assert_eq!(y.data(), &[0.0, 5.0]);
    }

    #[test]
    fn stitched_forward_equals_monolithic_exactly() {
        let spec = ModelSpec::mlp(6, &[8, 5], 3).unwrap(); // 5 layers
        let params = init_params(&spec, 42);
        let x = random_input(7, 4, 6);
        let (mono, _) = nn::forward(&spec, &params, &x).unwrap();
        let plan = SplitPlan::new(vec![2]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        let (mid, _) = segment_forward(&segs[0], &x).unwrap();
        let (stitched, _) = segment_forward(&segs[1], &mid).unwrap();
        assert_eq!(mono, stitched);
    }

    #[test]
    fn stitched_backward_equals_monolithic_exactly() {
        let spec = ModelSpec::mlp(5, &[7, 6], 2).unwrap();
        let params = init_params(&spec, 11);
        let x = random_input(13, 3, 5);
        let labels = vec![0, 1, 1];

        let (_, lg, cache) = nn::loss_and_grad(&spec, &params, &x, &labels).unwrap();
        let (mono_grads, _) = nn::backward(&spec, &params, &cache, &lg).unwrap();

        let plan = SplitPlan::new(vec![2]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        let (mid, dev_cache) = segment_forward(&segs[0], &x).unwrap();
        let (logits, srv_cache) = segment_forward(&segs[1], &mid).unwrap();
        let (_, lg2) = nn::softmax_cross_entropy(&logits, &labels).unwrap();
        let (srv_grads, grad_in) = segment_backward(&segs[1], &srv_cache, &lg2).unwrap();
        let (dev_grads, _) = segment_backward(&segs[0], &dev_cache, &grad_in).unwrap();

        let n_dev = dev_grads.dense.len();
        for (i, g) in dev_grads.dense.iter().enumerate() {
            assert_eq!(g, &mono_grads.dense[i]);
        }
        for (i, g) in srv_grads.dense.iter().enumerate() {
            assert_eq!(g, &mono_grads.dense[n_dev + i]);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_everywhere() {
        let spec = ModelSpec::mlp(4, &[5], 2).unwrap();
        let params = init_params(&spec, 5);
        let plan = SplitPlan::new(vec![1]).unwrap();
        let segs = partition(&spec, &params, &plan).unwrap();
        let x = random_input(3, 2, 4);
        let (mid, _) = segment_forward(&segs[0], &x).unwrap();
        let (_, cache) = segment_forward(&segs[1], &mid).unwrap();
        let zero = Tensor::zeros(vec![2, 2]);
        let (grads, grad_in) = segment_backward(&segs[1], &cache, &zero).unwrap();
        assert!(grad_in.data().iter().all(|&v| v == 0.0));
        for d in &grads.dense {
            assert!(d.weights.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn payload_bits_multiply_out() {
        // Cut of width 64, batch 32, 64-bit precision.
        let spec = ModelSpec::mlp(32, &[64], 4).unwrap();
        assert_eq!(smashed_payload_bits(&spec, 1, 32, 64).unwrap(), 131_072);
        assert_eq!(smashed_payload_bits(&spec, 1, 32, 8).unwrap(), 16_384);
        assert!(smashed_payload_bits(&spec, 9, 32, 64).is_err());
    }

    #[test]
    fn payload_sweep_matches_act_bits_table() {
        let spec = ModelSpec::mlp(10, &[6, 4], 3).unwrap(); // widths 6,6,4,4
        let batch = 7;
        for cut in 1..spec.layer_count() {
            let expected = batch as u64 * spec.layers()[cut - 1].act_bits(64);
            assert_eq!(
                smashed_payload_bits(&spec, cut, batch, 64).unwrap(),
                expected
            );
        }
    }
}
