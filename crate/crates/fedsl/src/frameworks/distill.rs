//! Temperature-softened knowledge-distillation loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise log-softmax of `logits / temperature`.
fn log_softmax_scaled(logits: &Tensor, temperature: f64) -> Vec<f64> {
    let (batch, classes) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; batch * classes];
    for r in 0..batch {
        let row = logits.row(r);
        let m = row
            .iter()
            .map(|v| v / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v / temperature - m).exp();
        }
        let lse = m + sum.ln();
        for c in 0..classes {
            out[r * classes + c] = row[c] / temperature - lse;
        }
    }
    out
}

/// Distillation objective and its exact gradient w.r.t. the student logits:
///
/// `loss = (1-lambda) * CE(student, hard) + lambda * T^2 * KL(p_T || p_S)`
///
/// where `p_T = softmax(teacher/T)` and `p_S = softmax(student/T)`; the CE
/// term is dropped when `hard_labels` is absent. Both terms are means over
/// the batch.
pub fn distill_loss(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    hard_labels: Option<&[usize]>,
    temperature: f64,
    lambda: f64,
) -> Result<(f64, Tensor)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::validation("temperature must be positive"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::validation("lambda must be in [0, 1]"));
    }
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::validation(
            "student/teacher class dimensions must match",
        ));
    }
    let (batch, classes) = (student_logits.rows(), student_logits.cols());
    let log_ps = log_softmax_scaled(student_logits, temperature);
    let log_pt = log_softmax_scaled(teacher_logits, temperature);

    let mut loss = 0.0;
    let mut grad = vec![0.0; batch * classes];
    let bf = batch as f64;

    // KL(p_T || p_S) term; gradient is lambda * T * (p_S - p_T) / batch.
    let mut kl_sum = 0.0;
    for i in 0..batch * classes {
        let pt = log_pt[i].exp();
        let ps = log_ps[i].exp();
        kl_sum += pt * (log_pt[i] - log_ps[i]);
        grad[i] = lambda * temperature * (ps - pt) / bf;
    }
    loss += lambda * temperature * temperature * kl_sum / bf;

    if let Some(labels) = hard_labels {
        let (ce, ce_grad) = crate::nn::softmax_cross_entropy(student_logits, labels)?;
        loss += (1.0 - lambda) * ce;
        for (g, &cg) in grad.iter_mut().zip(ce_grad.data()) {
            *g += (1.0 - lambda) * cg;
        }
    }

    Ok((loss, Tensor::new(vec![batch, classes], grad)?))
}

/// Temperature-softened class probabilities, `softmax(logits / T)`.
pub fn soft_probs(logits: &Tensor, temperature: f64) -> Tensor {
    let data: Vec<f64> = log_softmax_scaled(logits, temperature)
        .iter()
        .map(|l| l.exp())
        .collect();
    Tensor::new(logits.shape().to_vec(), data).expect("softmax output")
}

/// Pseudo-logits whose temperature-T softmax reproduces `probs` exactly:
/// `T * ln(p)`. Used to feed averaged multi-teacher soft labels back
/// through [`distill_loss`].
pub fn probs_to_pseudo_logits(probs: &Tensor, temperature: f64) -> Result<Tensor> {
    let data: Vec<f64> = probs
        .data()
        .iter()
        .map(|&p| temperature * p.max(1e-300).ln())
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}
