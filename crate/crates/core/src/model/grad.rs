//! Closed-form gradients with manual backpropagation through at most one
//! hidden layer.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::loss::{loss_and_logit_grad, LossKind};
use super::ModelParams;
use crate::data::Matrix;
use crate::error::{Error, Result};

/// Flattened last-layer gradient `[dW_out (C x h), db_out (C)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(pub Vec<f64>);

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_point(params: &ModelParams, x: &[f64], target: &[f64], kind: LossKind) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::invalid(format!("point has {} features, model expects {}", x.len(), params.input_dim())));
    }
    if kind != LossKind::Entropy && target.len() != params.classes() {
        return Err(Error::invalid(format!("target has {} classes, model has {}", target.len(), params.classes())));
    }
    Ok(())
}

/// Outer product `dz ⊗ h` followed by `dz` itself: the last-layer gradient layout.
fn outer_with_bias(dz: &[f64], h: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(dz.len() * (h.len() + 1));
    for &d in dz {
        g.extend(h.iter().map(|v| d * v));
    }
    g.extend_from_slice(dz);
    g
}

/// Loss and last-layer gradient given the last-layer input `h` and logits.
pub fn last_layer_gradient_from_features(h: &[f64], logits: &[f64], target: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let (loss, dz) = loss_and_logit_grad(logits, target, kind);
    (loss, outer_with_bias(&dz, h))
}

/// Gradient of the per-point loss with respect to the last layer only.
///
/// For cross-entropy / KL this is `(p_c - q_c) h` per class row and
/// `(p_c - q_c)` for the bias; the squared loss routes `2(p - q)` through the
/// softmax Jacobian first.
pub fn last_layer_gradient(params: &ModelParams, x: &[f64], target: &[f64], kind: LossKind) -> Result<GradientVector> {
    check_point(params, x, target, kind)?;
    let h = params.features(x);
    let z = params.output.apply(&h);
    Ok(GradientVector(last_layer_gradient_from_features(&h, &z, target, kind).1))
}

/// Loss and full flattened gradient (layout of [`ModelParams::flat`]) for one point.
pub fn point_gradient(params: &ModelParams, x: &[f64], target: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let act = params.activations(x);
    let (loss, dz) = loss_and_logit_grad(&act.logits, target, kind);
    let last = outer_with_bias(&dz, &act.features);
    let Some(hidden) = &params.hidden else {
        return (loss, last);
    };
    let pre = act.pre.as_deref().expect("mlp activations carry the pre-activation");
    let out = &params.output;
    let mut dpre = vec![0.0; hidden.n_out];
    for (j, dp) in dpre.iter_mut().enumerate() {
        if pre[j] > 0.0 {
            *dp = (0..out.n_out).map(|c| out.weights[c * out.n_in + j] * dz[c]).sum();
        }
    }
    let mut g = outer_with_bias(&dpre, x);
    g.extend_from_slice(&last);
    (loss, g)
}

/// Gradient of the per-point loss with respect to the input `x`, with `target` held fixed.
pub fn input_gradient(params: &ModelParams, x: &[f64], target: &[f64], kind: LossKind) -> Vec<f64> {
    let act = params.activations(x);
    let (_, dz) = loss_and_logit_grad(&act.logits, target, kind);
    let out = &params.output;
    let dfeat: Vec<f64> =
        (0..out.n_in).map(|i| (0..out.n_out).map(|c| out.weights[c * out.n_in + i] * dz[c]).sum()).collect();
    let Some(hidden) = &params.hidden else {
        return dfeat;
    };
    let pre = act.pre.as_deref().expect("mlp activations carry the pre-activation");
    let mut dx = vec![0.0; hidden.n_in];
    for (j, &dh) in dfeat.iter().enumerate() {
        if pre[j] > 0.0 && dh != 0.0 {
            let row = &hidden.weights[j * hidden.n_in..(j + 1) * hidden.n_in];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += w * dh;
            }
        }
    }
    dx
}

/// Mean loss and mean full gradient over the rows of `batch`.
///
/// `targets` holds one probability row per batch row (ignored for
/// [`LossKind::Entropy`], where it may have zero columns). Per-row gradients
/// may be computed in parallel; they are summed in row order.
pub fn full_gradient(
    params: &ModelParams,
    batch: &Matrix,
    targets: &Matrix,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.rows();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if targets.rows() != n && !(kind == LossKind::Entropy && targets.cols() == 0) {
        return Err(Error::invalid("target rows do not match batch rows"));
    }
    let empty: [f64; 0] = [];
    for i in 0..n {
        let t = if targets.cols() == 0 { &empty[..] } else { targets.row(i) };
        check_point(params, batch.row(i), t, kind)?;
    }
    let per_row = crate::par::map_range(n, |i| {
        let t = if targets.cols() == 0 { &empty[..] } else { targets.row(i) };
        point_gradient(params, batch.row(i), t, kind)
    });
    let mut grad = vec![0.0; params.num_params()];
    let mut loss = 0.0;
    for (l, g) in &per_row {
        loss += l;
        crate::vecops::axpy(1.0, g, &mut grad);
    }
    let inv = 1.0 / n as f64;
    crate::vecops::scale(&mut grad, inv);
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{softmax, Architecture};
    use crate::rng::seeded;
    use rand::Rng;

    fn random_model(arch: Architecture, seed: u64) -> ModelParams {
        let mut p = ModelParams::init(arch, 3, 5, 3, seed).unwrap();
        let mut rng = seeded(seed ^ 0xABCD);
        let flat: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.set_flat(&flat).unwrap();
        p
    }

    #[test]
    fn matched_distributions_have_zero_gradient() {
        let p = random_model(Architecture::Mlp1, 1);
        let x = [0.3, -0.2, 0.9];
        let q = p.predict_proba(&x);
        for kind in [LossKind::CrossEntropy, LossKind::Kl, LossKind::Squared] {
            let g = last_layer_gradient(&p, &x, &q, kind).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-15), "{kind:?}");
        }
    }

    #[test]
    fn outer_product_structure() {
        // linear, x = e_1, C = 2, p - q = (0.5, -0.5)
        let p = ModelParams::zeros(Architecture::Linear, 3, 0, 2).unwrap();
        let x = [1.0, 0.0, 0.0];
        let q = [0.0, 1.0];
        let g = last_layer_gradient(&p, &x, &q, LossKind::CrossEntropy).unwrap();
        assert_eq!(g.0, vec![0.5, 0.0, 0.0, -0.5, 0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn single_row_full_gradient_tail_is_last_layer_gradient() {
        for arch in [Architecture::Linear, Architecture::Mlp1] {
            let p = random_model(arch, 7);
            let x = [0.5, -1.5, 0.25];
            let q = softmax(&[0.1, 0.7, -0.3]);
            for kind in [LossKind::CrossEntropy, LossKind::Squared, LossKind::Kl, LossKind::Entropy] {
                let batch = Matrix::from_rows(&[x.to_vec()]).unwrap();
                let t = Matrix::from_rows(&[q.clone()]).unwrap();
                let (_, full) = full_gradient(&p, &batch, &t, kind).unwrap();
                let last = last_layer_gradient(&p, &x, &q, kind).unwrap();
                let tail = &full[full.len() - last.len()..];
                for (a, b) in tail.iter().zip(last.iter()) {
                    assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300) || a == b);
                }
            }
        }
    }

    #[test]
    fn perfect_predictions_give_near_zero_gradient() {
        let mut p = ModelParams::zeros(Architecture::Linear, 2, 0, 2).unwrap();
        p.output.weights = vec![30.0, 0.0, -30.0, 0.0];
        let batch = Matrix::from_rows(&[vec![1.0, 0.2], vec![-1.0, 0.4]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (loss, g) = full_gradient(&p, &batch, &t, LossKind::CrossEntropy).unwrap();
        assert!(loss < 1e-6);
        assert!(crate::vecops::norm(&g) < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let p = ModelParams::zeros(Architecture::Linear, 2, 0, 2).unwrap();
        assert!(last_layer_gradient(&p, &[1.0], &[0.5, 0.5], LossKind::CrossEntropy).is_err());
        assert!(last_layer_gradient(&p, &[1.0, 2.0], &[1.0], LossKind::CrossEntropy).is_err());
    }
}
