//! Minimal f64 neural-network engine: dense and ReLU layers, softmax
//! cross-entropy, exact reverse-mode gradients, and SGD.
//!
//! Summation order inside every kernel is fixed (ascending index), so a
//! computation split across segments reproduces the monolithic result
//! bit for bit.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
}

/// Declarative description of one layer, with closed-form cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
        }
    }

    pub fn relu(dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::validation("layer dims must be positive"));
        }
        if self.kind == LayerKind::Relu && self.in_dim != self.out_dim {
            return Err(Error::validation("ReLU requires in_dim == out_dim"));
        }
        Ok(())
    }

    /// Trainable parameters: in*out weights plus out biases for Dense.
    pub fn param_count(&self) -> u64 {
        match self.kind {
            LayerKind::Dense => (self.in_dim * self.out_dim + self.out_dim) as u64,
            LayerKind::Relu => 0,
        }
    }

    /// Forward FLOPs per sample.
    pub fn flops_fwd(&self) -> u64 {
        match self.kind {
            LayerKind::Dense => 2 * (self.in_dim * self.out_dim) as u64,
            LayerKind::Relu => self.out_dim as u64,
        }
    }

    /// Backward FLOPs per sample.
    pub fn flops_bwd(&self) -> u64 {
        match self.kind {
            LayerKind::Dense => 4 * (self.in_dim * self.out_dim) as u64,
            LayerKind::Relu => self.out_dim as u64,
        }
    }

    /// Bits of activation payload per sample at the given precision.
    pub fn act_bits(&self, precision_bits: u32) -> u64 {
        self.out_dim as u64 * precision_bits as u64
    }
}

/// An ordered stack of layers with validated chaining.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    num_classes: usize,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("model must have at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()
                .map_err(|e| Error::validation(format!("layer {i}: {e}")))?;
        }
        for i in 0..layers.len() - 1 {
            if layers[i].out_dim != layers[i + 1].in_dim {
                return Err(Error::Dimension {
                    layer: i + 1,
                    detail: format!(
                        "layer {} out_dim {} != layer {} in_dim {}",
                        i,
                        layers[i].out_dim,
                        i + 1,
                        layers[i + 1].in_dim
                    ),
                });
            }
        }
        let input_dim = layers[0].in_dim;
        let num_classes = layers[layers.len() - 1].out_dim;
        Ok(ModelSpec {
            layers,
            input_dim,
            num_classes,
        })
    }

    /// Dense+ReLU MLP: input -> hidden... -> classes, ReLU after each hidden.
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::dense(prev, h));
            layers.push(LayerSpec::relu(h));
            prev = h;
        }
        layers.push(LayerSpec::dense(prev, num_classes));
        ModelSpec::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Activation width at the boundary after layer `cut - 1`.
    pub fn width_at_cut(&self, cut: usize) -> Result<usize> {
        if cut == 0 || cut >= self.layers.len() {
            return Err(Error::validation(format!(
                "cut {} out of range (1..{})",
                cut,
                self.layers.len()
            )));
        }
        Ok(self.layers[cut - 1].out_dim)
    }

    /// Sub-model over `range` of layers; chaining is inherited.
    pub fn slice(&self, start: usize, end: usize) -> Result<ModelSpec> {
        if start >= end || end > self.layers.len() {
            return Err(Error::validation(format!(
                "bad layer range {start}..{end} for {} layers",
                self.layers.len()
            )));
        }
        ModelSpec::new(self.layers[start..end].to_vec())
    }
}

/// Weights (out_dim x in_dim, row-major) and bias (out_dim) of a Dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// One `DenseParams` per Dense layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dense: Vec<DenseParams>,
}

/// Parameter gradients, congruent to `ModelParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dense: Vec<DenseParams>,
}

impl ModelParams {
    /// Total scalar parameter count.
    pub fn count(&self) -> u64 {
        self.dense
            .iter()
            .map(|d| (d.weights.len() + d.bias.len()) as u64)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.dense
            .iter()
            .all(|d| d.weights.is_finite() && d.bias.is_finite())
    }

    /// Maximum absolute difference against a congruent parameter set.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        assert_eq!(self.dense.len(), other.dense.len());
        self.dense
            .iter()
            .zip(&other.dense)
            .map(|(a, b)| {
                a.weights
                    .max_abs_diff(&b.weights)
                    .max(a.bias.max_abs_diff(&b.bias))
            })
            .fold(0.0, f64::max)
    }
}

fn check_params(spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    let dense_layers: Vec<&LayerSpec> = spec
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Dense)
        .collect();
    if dense_layers.len() != params.dense.len() {
        return Err(Error::validation(format!(
            "params cover {} dense layers, spec has {}",
            params.dense.len(),
            dense_layers.len()
        )));
    }
    for (i, (l, p)) in dense_layers.iter().zip(&params.dense).enumerate() {
        if p.weights.shape() != [l.out_dim, l.in_dim] || p.bias.shape() != [l.out_dim] {
            return Err(Error::validation(format!(
                "dense layer {} param shape mismatch",
                i
            )));
        }
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases; bit-deterministic in (spec, seed).
pub fn init_params(spec: &ModelSpec, seed: u64) -> ModelParams {
    let mut stream = RngStream::new(seed, "init").expect("static label");
    let mut dense = Vec::new();
    for l in &spec.layers {
        if l.kind != LayerKind::Dense {
            continue;
        }
        let limit = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
        let w: Vec<f64> = (0..l.in_dim * l.out_dim)
            .map(|_| (2.0 * stream.next_f64() - 1.0) * limit)
            .collect();
        dense.push(DenseParams {
            weights: Tensor::new(vec![l.out_dim, l.in_dim], w).expect("init weights"),
            bias: Tensor::zeros(vec![l.out_dim]),
        });
    }
    ModelParams { dense }
}

/// Per-layer inputs saved by `forward` for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Tensor>,
    batch: usize,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn dense_forward(l: &LayerSpec, p: &DenseParams, x: &Tensor) -> Tensor {
    let (batch, in_dim, out_dim) = (x.rows(), l.in_dim, l.out_dim);
    let w = p.weights.data();
    let b = p.bias.data();
    let xd = x.data();
    let mut out = vec![0.0; batch * out_dim];
    for r in 0..batch {
        let xi = &xd[r * in_dim..(r + 1) * in_dim];
        let oi = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, ov) in oi.iter_mut().enumerate() {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for i in 0..in_dim {
                acc += xi[i] * wr[i];
            }
            *ov = acc;
        }
    }
    Tensor::new(vec![batch, out_dim], out).expect("dense forward output")
}

/// Runs the full stack; returns logits and the cache for `backward`.
pub fn forward(spec: &ModelSpec, params: &ModelParams, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    check_params(spec, params)?;
    if x.shape().len() != 2 || x.cols() != spec.input_dim {
        return Err(Error::Dimension {
            layer: 0,
            detail: format!(
                "input width {} does not match model input_dim {}",
                if x.shape().len() == 2 { x.cols() } else { 0 },
                spec.input_dim
            ),
        });
    }
    if !x.is_finite() {
        return Err(Error::Numeric("forward input is not finite".into()));
    }
    let batch = x.rows();
    let mut cur = x.clone();
    let mut layer_inputs = Vec::with_capacity(spec.layers.len());
    let mut dense_idx = 0;
    for l in &spec.layers {
        layer_inputs.push(cur.clone());
        cur = match l.kind {
            LayerKind::Dense => {
                let out = dense_forward(l, &params.dense[dense_idx], &cur);
                dense_idx += 1;
                out
            }
            LayerKind::Relu => {
                let mut out = cur;
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
        };
    }
    debug_assert!(cur.is_finite(), "forward produced non-finite activations");
    Ok((cur, ForwardCache { layer_inputs, batch }))
}

/// Stable softmax cross-entropy over integer labels.
///
/// Returns the mean negative log-likelihood and the logit gradient
/// `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return Err(Error::validation(format!(
            "{} labels for batch of {}",
            labels.len(),
            batch
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::validation(format!(
            "label {bad} out of range [0, {classes})"
        )));
    }
    let mut grad = vec![0.0; batch * classes];
    let mut loss = 0.0;
    for r in 0..batch {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - m).exp();
        }
        let lse = m + sum.ln();
        loss += lse - row[labels[r]];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - lse).exp() / batch as f64;
        }
        g[labels[r]] -= 1.0 / batch as f64;
    }
    loss /= batch as f64;
    Ok((loss, Tensor::new(vec![batch, classes], grad)?))
}

/// Forward plus softmax cross-entropy in one call.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &Tensor,
    labels: &[usize],
) -> Result<(f64, Tensor, ForwardCache)> {
    let (logits, cache) = forward(spec, params, x)?;
    let (loss, logit_grad) = softmax_cross_entropy(&logits, labels)?;
    Ok((loss, logit_grad, cache))
}

/// Exact reverse-mode gradients for all Dense parameters and the input.
pub fn backward(
    spec: &ModelSpec,
    params: &ModelParams,
    cache: &ForwardCache,
    logit_grad: &Tensor,
) -> Result<(Gradients, Tensor)> {
    check_params(spec, params)?;
    if cache.layer_inputs.len() != spec.layers.len() {
        return Err(Error::Sim(format!(
            "cache covers {} layers, spec has {}",
            cache.layer_inputs.len(),
            spec.layers.len()
        )));
    }
    let batch = cache.batch;
    let last = spec.layers.last().expect("nonempty spec");
    if logit_grad.shape() != [batch, last.out_dim] {
        return Err(Error::Sim("logit_grad shape does not match cache".into()));
    }
    let mut grads: Vec<DenseParams> = Vec::new();
    let mut dense_idx = params.dense.len();
    let mut g = logit_grad.clone();
    for (li, l) in spec.layers.iter().enumerate().rev() {
        let x = &cache.layer_inputs[li];
        if x.shape() != [batch, l.in_dim] {
            return Err(Error::Sim(format!("cache/spec mismatch at layer {li}")));
        }
        match l.kind {
            LayerKind::Relu => {
                let mut out = g;
                for (gv, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g = out;
            }
            LayerKind::Dense => {
                dense_idx -= 1;
                let p = &params.dense[dense_idx];
                let (in_dim, out_dim) = (l.in_dim, l.out_dim);
                let mut dw = vec![0.0; in_dim * out_dim];
                let mut db = vec![0.0; out_dim];
                let mut dx = vec![0.0; batch * in_dim];
                let w = p.weights.data();
                let gd = g.data();
                let xd = x.data();
                for r in 0..batch {
                    let gr = &gd[r * out_dim..(r + 1) * out_dim];
                    let xr = &xd[r * in_dim..(r + 1) * in_dim];
                    let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                    for o in 0..out_dim {
                        let go = gr[o];
                        db[o] += go;
                        let wr = &w[o * in_dim..(o + 1) * in_dim];
                        let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            dwr[i] += go * xr[i];
                            dxr[i] += go * wr[i];
                        }
                    }
                }
                grads.push(DenseParams {
                    weights: Tensor::new(vec![out_dim, in_dim], dw)?,
                    bias: Tensor::new(vec![out_dim], db)?,
                });
                g = Tensor::new(vec![batch, in_dim], dx)?;
            }
        }
    }
    grads.reverse();
    Ok((Gradients { dense: grads }, g))
}

/// One SGD step, `p <- p - lr * g`. Value semantics: inputs are untouched.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, lr: f64) -> Result<ModelParams> {
    if params.dense.len() != grads.dense.len() {
        return Err(Error::validation("params/grads layer count mismatch"));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::validation("learning rate must be finite and >= 0"));
    }
    let mut out = params.clone();
    for (p, g) in out.dense.iter_mut().zip(&grads.dense) {
        if p.weights.shape() != g.weights.shape() || p.bias.shape() != g.bias.shape() {
            return Err(Error::validation("params/grads shape mismatch"));
        }
        if !(g.weights.is_finite() && g.bias.is_finite()) {
            return Err(Error::Numeric("non-finite gradients in sgd_step".into()));
        }
        for (pv, gv) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *pv -= lr * gv;
        }
        for (pv, gv) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(out)
}

/// Fraction of samples whose argmax logit matches the label.
/// Argmax ties break toward the lowest class index.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ModelParams,
    features: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::validation("evaluate: empty dataset"));
    }
    let (logits, _) = forward(spec, params, features)?;
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_model(w: &[Vec<f64>], b: Vec<f64>) -> (ModelSpec, ModelParams) {
        let out_dim = w.len();
        let in_dim = w[0].len();
        let spec = ModelSpec::new(vec![LayerSpec::dense(in_dim, out_dim)]).unwrap();
        let params = ModelParams {
            dense: vec![DenseParams {
                weights: Tensor::from_rows(w).unwrap(),
                bias: Tensor::new(vec![out_dim], b).unwrap(),
            }],
        };
        (spec, params)
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = ModelSpec::mlp(2, &[2], 2).unwrap();
        let a = init_params(&spec, 7);
        let b = init_params(&spec, 7);
        assert_eq!(a, b);
        for d in &a.dense {
            assert!(d.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_weight_statistics_match_glorot() {
        // Dense 3 -> 5: limit = sqrt(6/8); check bound and empirical mean
        // over many re-seeded draws.
        let spec = ModelSpec::new(vec![LayerSpec::dense(3, 5)]).unwrap();
        let limit = (6.0f64 / 8.0).sqrt();
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..7000u64 {
            let p = init_params(&spec, seed);
            for &w in p.dense[0].weights.data() {
                assert!(w.abs() <= limit);
                sum += w;
                count += 1;
            }
        }
        assert!(count > 100_000);
        let mean = sum / count as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dense_identity_plus_bias() {
        let (spec, params) = dense_model(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.5, -0.5],
        );
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5]);
    }

    #[test]
    fn dense_hand_matrix_product() {
        let (spec, params) = dense_model(&[vec![1.0, 1.0], vec![2.0, 0.0]], vec![0.0, 0.0]);
        let x = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data(), &[7.0, 6.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let spec = ModelSpec::new(vec![LayerSpec::relu(3)]).unwrap();
        let params = ModelParams { dense: vec![] };
        let x = Tensor::from_rows(&[vec![-1.0, 0.0, 3.0]]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let spec = ModelSpec::mlp(3, &[], 2).unwrap();
        let params = init_params(&spec, 0);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        match forward(&spec, &params, &x) {
            Err(Error::Dimension { .. }) => {}
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_ce_symmetric_case() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_ce_saturated_is_stable() {
        let logits = Tensor::from_rows(&[vec![100.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-40 && loss >= 0.0);
        assert!(grad.data().iter().all(|v| v.abs() < 1e-40));
    }

    #[test]
    fn softmax_ce_hand_value() {
        let logits = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "loss {loss}");
        assert!((loss - 0.31326168752).abs() < 1e-10);
    }

    #[test]
    fn softmax_ce_no_nan_at_large_magnitude() {
        let logits = Tensor::from_rows(&[vec![1e3, -1e3, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.is_finite());
    }

    #[test]
    fn softmax_ce_rejects_bad_label() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let spec = ModelSpec::mlp(3, &[4], 2).unwrap();
        let params = init_params(&spec, 1);
        let x = Tensor::from_rows(&[vec![0.3, -0.2, 0.5]]).unwrap();
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let zero = Tensor::zeros(vec![1, 2]);
        let (grads, input_grad) = backward(&spec, &params, &cache, &zero).unwrap();
        for d in &grads.dense {
            assert!(d.weights.data().iter().all(|&v| v == 0.0));
            assert!(d.bias.data().iter().all(|&v| v == 0.0));
        }
        assert!(input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_dense_weight_grad_is_outer_product() {
        let (spec, params) = dense_model(&[vec![0.5, -1.0], vec![2.0, 0.25]], vec![0.0, 0.0]);
        let x = Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap();
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let g = Tensor::from_rows(&[vec![0.7, -0.1]]).unwrap();
        let (grads, _) = backward(&spec, &params, &cache, &g).unwrap();
        // dW[o][i] = g[o] * x[i]
        let dw = grads.dense[0].weights.data();
        assert_eq!(dw, &[0.7 * 3.0, 0.7 * -2.0, -0.1 * 3.0, -0.1 * -2.0]);
        assert_eq!(grads.dense[0].bias.data(), &[0.7, -0.1]);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let spec = ModelSpec::mlp(2, &[3], 2).unwrap();
        let params = init_params(&spec, 5);
        let x = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let (_, lg, cache) = loss_and_grad(&spec, &params, &x, &[1]).unwrap();
        let (grads, _) = backward(&spec, &params, &cache, &lg).unwrap();
        let stepped = sgd_step(&params, &grads, 0.0).unwrap();
        assert_eq!(stepped, params);
    }

    #[test]
    fn sgd_hand_values_at_paper_rate() {
        let (spec, params) = dense_model(&[vec![1.0], vec![3.0]], vec![0.0, 0.0]);
        let grads = Gradients {
            dense: vec![DenseParams {
                weights: Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
                bias: Tensor::zeros(vec![2]),
            }],
        };
        let stepped = sgd_step(&params, &grads, 0.001).unwrap();
        assert_eq!(stepped.dense[0].weights.data(), &[0.999, 2.999]);
        let _ = spec;
    }

    #[test]
    fn two_steps_equal_one_double_step_on_fixed_grad() {
        let spec = ModelSpec::mlp(2, &[3], 2).unwrap();
        let params = init_params(&spec, 9);
        let grads = Gradients {
            dense: init_params(&spec, 10).dense,
        };
        let twice = sgd_step(&sgd_step(&params, &grads, 0.001).unwrap(), &grads, 0.001).unwrap();
        let once = sgd_step(&params, &grads, 0.002).unwrap();
        assert!(twice.max_abs_diff(&once) < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_grads() {
        let (_, params) = dense_model(&[vec![1.0]], vec![0.0]);
        let mut g = params.clone();
        g.dense[0].weights.data_mut()[0] = f64::INFINITY;
        let grads = Gradients { dense: g.dense };
        assert!(matches!(
            sgd_step(&params, &grads, 0.1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn evaluate_constant_logits_on_balanced_set() {
        // Zero weights produce constant logits; ties break to class 0,
        // so accuracy equals the share of class-0 samples.
        let spec = ModelSpec::new(vec![LayerSpec::dense(2, 2)]).unwrap();
        let params = ModelParams {
            dense: vec![DenseParams {
                weights: Tensor::zeros(vec![2, 2]),
                bias: Tensor::zeros(vec![2]),
            }],
        };
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let acc = evaluate(&spec, &params, &x, &[0, 1]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn evaluate_single_correct_sample() {
        let (spec, params) = dense_model(&[vec![1.0], vec![-1.0]], vec![0.0, 0.0]);
        let x = Tensor::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(evaluate(&spec, &params, &x, &[0]).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_rejects_empty() {
        let (spec, params) = dense_model(&[vec![1.0]], vec![0.0]);
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(evaluate(&spec, &params, &x, &[]).is_err());
    }

    #[test]
    fn loss_decreases_under_full_batch_sgd() {
        // 100 full-batch steps on a separable 2-class blob set.
        let spec = ModelSpec::mlp(2, &[8], 2).unwrap();
        let mut params = init_params(&spec, 3);
        let mut stream = crate::rng::RngStream::new(77, "blob").unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let cx = if c == 0 { -1.0 } else { 1.0 };
            rows.push(vec![cx + 0.1 * stream.normal(), 0.1 * stream.normal()]);
            labels.push(c);
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let (loss0, _, _) = loss_and_grad(&spec, &params, &x, &labels).unwrap();
        for _ in 0..100 {
            let (_, lg, cache) = loss_and_grad(&spec, &params, &x, &labels).unwrap();
            let (grads, _) = backward(&spec, &params, &cache, &lg).unwrap();
            params = sgd_step(&params, &grads, 0.01).unwrap();
        }
        let (loss1, _, _) = loss_and_grad(&spec, &params, &x, &labels).unwrap();
        assert!(loss1 < loss0, "loss {loss0} -> {loss1}");
    }
}
