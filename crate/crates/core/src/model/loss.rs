use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Per-point loss applied to the softmax output `p = softmax(z)` against a
/// (stopped) target distribution `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-Σ q_c log p_c`
    CrossEntropy,
    /// `‖p - q‖²`
    Squared,
    /// `KL(q ‖ p)`; same gradient as cross-entropy.
    Kl,
    /// `-Σ p_c log p_c`; the target is ignored.
    Entropy,
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Loss value and its gradient with respect to the logits `z`.
pub fn loss_and_logit_grad(z: &[f64], target: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let lsm = log_softmax(z);
    // same routine as prediction, so a target equal to the model's own output
    // gives an exactly zero gradient
    let p = softmax(z);
    match kind {
        LossKind::CrossEntropy | LossKind::Kl => {
            let grad = p.iter().zip(target).map(|(pc, qc)| pc - qc).collect();
            let ce: f64 = -target.iter().zip(&lsm).map(|(q, l)| q * l).sum::<f64>();
            let loss = if kind == LossKind::Kl {
                let neg_entropy: f64 = target.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum();
                ce + neg_entropy
            } else {
                ce
            };
            (loss, grad)
        }
        LossKind::Squared => {
            let diff: Vec<f64> = p.iter().zip(target).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum();
            let weighted: f64 = diff.iter().zip(&p).map(|(d, pc)| d * pc).sum();
            let grad = p.iter().zip(&diff).map(|(pk, dk)| 2.0 * pk * (dk - weighted)).collect();
            (loss, grad)
        }
        LossKind::Entropy => {
            let h: f64 = -p.iter().zip(&lsm).map(|(pc, l)| pc * l).sum::<f64>();
            let grad = p.iter().zip(&lsm).map(|(pk, lk)| -pk * (lk + h)).collect();
            (h, grad)
        }
    }
}

/// Targets for [`ce_loss`]: hard class ids or one probability row per point.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Probs(&'a Matrix),
}

/// Mean cross-entropy of `logits` against `targets`, via max-shifted log-sum-exp.
pub fn ce_loss(logits: &Matrix, targets: Targets<'_>) -> Result<f64> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let c = logits.cols();
    let mut total = 0.0;
    match targets {
        Targets::Classes(labels) => {
            if labels.len() != n {
                return Err(Error::invalid("target count does not match logits"));
            }
            for (row, &y) in logits.iter_rows().zip(labels) {
                if y >= c {
                    return Err(Error::invalid(format!("class {y} out of range")));
                }
                total -= log_softmax(row)[y];
            }
        }
        Targets::Probs(q) => {
            if q.rows() != n || q.cols() != c {
                return Err(Error::invalid("target matrix shape does not match logits"));
            }
            for (row, qrow) in logits.iter_rows().zip(q.iter_rows()) {
                let sum: f64 = qrow.iter().sum();
                if qrow.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid("probability targets must be non-negative and sum to 1"));
                }
                total -= qrow.iter().zip(log_softmax(row)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(total / n as f64)
}
