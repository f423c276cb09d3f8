//! Central finite-difference verification of the analytic gradients.
//!
//! The numeric side only ever calls `forward` + `softmax_cross_entropy`
//! (or the distillation loss value), never `backward`, so it is an
//! independent oracle for the reverse-mode path.

use crate::error::Result;
use crate::frameworks::distill_loss;
use crate::nn::{self, LayerSpec, ModelParams, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;

const H: f64 = 1e-6;

/// Relative error with an absolute floor at the finite-difference noise
/// level (~1e-9 for O(1) losses and h = 1e-6).
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

fn loss_value(spec: &ModelSpec, params: &ModelParams, x: &Tensor, labels: &[usize]) -> f64 {
    let (logits, _) = nn::forward(spec, params, x).expect("gradcheck forward");
    let (loss, _) = nn::softmax_cross_entropy(&logits, labels).expect("gradcheck loss");
    loss
}

/// Checks every parameter and input gradient of one (spec, params, batch)
/// against central differences; returns the maximum relative error.
pub fn check_model(spec: &ModelSpec, params: &ModelParams, x: &Tensor, labels: &[usize]) -> f64 {
    let (_, logit_grad, cache) =
        nn::loss_and_grad(spec, params, x, labels).expect("gradcheck loss_and_grad");
    let (grads, input_grad) =
        nn::backward(spec, params, &cache, &logit_grad).expect("gradcheck backward");

    let mut max_err = 0.0f64;
    let mut probe = |params: &ModelParams, analytic: f64, bump: &dyn Fn(&mut ModelParams, f64)| {
        let mut plus = params.clone();
        bump(&mut plus, H);
        let mut minus = params.clone();
        bump(&mut minus, -H);
        let numeric = (loss_value(spec, &plus, x, labels) - loss_value(spec, &minus, x, labels))
            / (2.0 * H);
        max_err = max_err.max(rel_err(analytic, numeric));
    };

    for li in 0..params.dense.len() {
        for wi in 0..params.dense[li].weights.len() {
            let analytic = grads.dense[li].weights.data()[wi];
            probe(params, analytic, &|p, h| p.dense[li].weights.data_mut()[wi] += h);
        }
        for bi in 0..params.dense[li].bias.len() {
            let analytic = grads.dense[li].bias.data()[bi];
            probe(params, analytic, &|p, h| p.dense[li].bias.data_mut()[bi] += h);
        }
    }

    // Input gradient via perturbed copies of x.
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= H;
        let numeric =
            (loss_value(spec, params, &plus, labels) - loss_value(spec, params, &minus, labels))
                / (2.0 * H);
        max_err = max_err.max(rel_err(input_grad.data()[i], numeric));
    }
    max_err
}

/// Checks the distillation loss gradient w.r.t. the student logits.
pub fn check_distill(seed: u64) -> f64 {
    let mut s = RngStream::new(seed, "gradcheck.distill").unwrap();
    let batch = 3;
    let classes = 4;
    let student =
        Tensor::new(vec![batch, classes], (0..12).map(|_| s.normal()).collect()).unwrap();
    let teacher =
        Tensor::new(vec![batch, classes], (0..12).map(|_| s.normal()).collect()).unwrap();
    let labels = vec![0usize, 2, 3];
    let temperature = 2.0;
    let lambda = 0.6;

    let (_, grad) =
        distill_loss(&student, &teacher, Some(&labels), temperature, lambda).unwrap();
    let mut max_err = 0.0f64;
    for i in 0..student.len() {
        let mut plus = student.clone();
        plus.data_mut()[i] += H;
        let mut minus = student.clone();
        minus.data_mut()[i] -= H;
        let (lp, _) = distill_loss(&plus, &teacher, Some(&labels), temperature, lambda).unwrap();
        let (lm, _) = distill_loss(&minus, &teacher, Some(&labels), temperature, lambda).unwrap();
        let numeric = (lp - lm) / (2.0 * H);
        max_err = max_err.max(rel_err(grad.data()[i], numeric));
    }
    max_err
}

/// Builds a random small model (<= ~50 parameters) and a batch.
fn random_case(seed: u64) -> (ModelSpec, ModelParams, Tensor, Vec<usize>) {
    let mut s = RngStream::new(seed, "gradcheck.case").unwrap();
    let in_dim = 2 + s.below(3);
    let hidden = 2 + s.below(3);
    let classes = 2 + s.below(2);
    let layers = if s.next_f64() < 0.5 {
        vec![
            LayerSpec::dense(in_dim, hidden),
            LayerSpec::relu(hidden),
            LayerSpec::dense(hidden, classes),
        ]
    } else {
        vec![LayerSpec::dense(in_dim, classes)]
    };
    let spec = ModelSpec::new(layers).unwrap();
    let params = nn::init_params(&spec, seed.wrapping_mul(31).wrapping_add(5));
    let batch = 1 + s.below(3);
    let x = Tensor::new(
        vec![batch, in_dim],
        (0..batch * in_dim).map(|_| s.normal()).collect(),
    )
    .unwrap();
    let labels = (0..batch).map(|_| s.below(classes)).collect();
    (spec, params, x, labels)
}

/// Runs `trials` random model checks plus the distillation check;
/// returns the overall max relative error.
pub fn run_suite(trials: usize) -> Result<f64> {
    let mut max_err = 0.0f64;
    for t in 0..trials {
        let (spec, params, x, labels) = random_case(1000 + t as u64);
        max_err = max_err.max(check_model(&spec, &params, &x, &labels));
    }
    for t in 0..trials.max(1).min(5) {
        max_err = max_err.max(check_distill(2000 + t as u64));
    }
    Ok(max_err)
}
