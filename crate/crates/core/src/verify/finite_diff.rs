//! Central finite differences against independently written scalar losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::Result;
use crate::model::{full_gradient, input_gradient, last_layer_gradient, Architecture, LossKind, ModelParams};
use crate::rng::{gaussian_vec, seeded};
use crate::ssl::{unlabeled_term, SslAlgorithm, SslLossConfig};

/// Denominator floor for relative errors: coordinates whose true magnitude is
/// below this are judged by absolute error scaled by the floor.
pub const REL_FLOOR: f64 = 1e-4;

/// `∂f/∂θ_i ≈ (f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64], step: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + step;
            let up = f(&probe);
            probe[i] = theta[i] - step;
            let down = f(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, REL_FLOOR)`.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR)).fold(0.0, f64::max)
}

// --- reference scalar losses: explicit loops, no shared helpers ---

fn ref_forward(flat: &[f64], arch: Architecture, d: usize, hidden: usize, c: usize, x: &[f64]) -> Vec<f64> {
    let (h, rest): (Vec<f64>, &[f64]) = match arch {
        Architecture::Linear => (x.to_vec(), flat),
        Architecture::Mlp1 => {
            let (w1, tail) = flat.split_at(hidden * d);
            let (b1, tail) = tail.split_at(hidden);
            let mut a = vec![0.0; hidden];
            for o in 0..hidden {
                let mut s = b1[o];
                for i in 0..d {
                    s += w1[o * d + i] * x[i];
                }
                a[o] = if s > 0.0 { s } else { 0.0 };
            }
            (a, tail)
        }
    };
    let width = h.len();
    let (w2, b2) = rest.split_at(c * width);
    (0..c)
        .map(|o| {
            let mut s = b2[o];
            for i in 0..width {
                s += w2[o * width + i] * h[i];
            }
            s
        })
        .collect()
}

fn ref_loss(z: &[f64], q: &[f64], kind: LossKind) -> f64 {
    let mx = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let s: f64 = z.iter().map(|v| (v - mx).exp()).sum();
    let logp: Vec<f64> = z.iter().map(|v| v - mx - s.ln()).collect();
    let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    match kind {
        LossKind::CrossEntropy => -(0..z.len()).map(|c| q[c] * logp[c]).sum::<f64>(),
        LossKind::Kl => (0..z.len()).filter(|&c| q[c] > 0.0).map(|c| q[c] * (q[c].ln() - logp[c])).sum(),
        LossKind::Squared => (0..z.len()).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum(),
        LossKind::Entropy => -(0..z.len()).map(|c| p[c] * logp[c]).sum::<f64>(),
    }
}

/// Worst relative error of one analytic gradient over all its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub name: String,
    pub draws: usize,
    pub max_rel_error: f64,
}

const D: usize = 3;
const HIDDEN: usize = 5;
const C: usize = 3;
const STEP: f64 = 1e-6;

struct Draw {
    params: ModelParams,
    x: Vec<f64>,
    q: Vec<f64>,
}

fn draw(seed: u64, idx: usize) -> Draw {
    let mut rng = seeded(seed.wrapping_add(idx as u64 * 7919));
    let arch = if idx.is_multiple_of(2) { Architecture::Linear } else { Architecture::Mlp1 };
    let mut params = ModelParams::zeros(arch, D, HIDDEN, C).expect("valid dims");
    let flat: Vec<f64> = (0..params.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.set_flat(&flat).expect("length matches");
    let x = (0..D).map(|_| rng.random_range(-1.5..1.5)).collect();
    let logits = gaussian_vec(&mut rng, C, 1.0);
    let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    Draw { params, x, q: e.into_iter().map(|v| v / s).collect() }
}

/// Runs every analytic gradient against finite differences on `draws`
/// random (parameters, input) pairs. `corrupt` perturbs one analytic
/// coordinate of the cross-entropy check, to exercise failure reporting.
pub fn check_gradients(draws: usize, seed: u64, corrupt: bool) -> Result<Vec<GradientCheck>> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for i in 0..draws {
        let Draw { params, x, q } = draw(seed, i);
        let arch = params.arch;
        let full = params.flat();
        let tail = full.len() - params.last_layer_len();
        let with_last = |w: &[f64]| {
            let mut f = full.clone();
            f[tail..].copy_from_slice(w);
            f
        };
        for (name, kind) in [
            ("last_layer.cross_entropy", LossKind::CrossEntropy),
            ("last_layer.squared", LossKind::Squared),
            ("last_layer.kl", LossKind::Kl),
            ("last_layer.entropy", LossKind::Entropy),
        ] {
            let mut g = last_layer_gradient(&params, &x, &q, kind)?.0;
            if corrupt && kind == LossKind::CrossEntropy {
                g[0] = g[0] * 1.5 + 1e-3;
            }
            let fd = finite_diff_gradient(
                |w| ref_loss(&ref_forward(&with_last(w), arch, D, HIDDEN, C, &x), &q, kind),
                &full[tail..],
                STEP,
            );
            record(name, max_rel_error(&g, &fd));
        }
        // batch of three rows over all parameters
        let rows = vec![x.clone(), x.iter().map(|v| -0.5 * v).collect(), x.iter().map(|v| v + 0.3).collect()];
        let batch = Matrix::from_rows(&rows)?;
        let targets = Matrix::from_rows(&[q.clone(), q.iter().rev().copied().collect(), q.clone()])?;
        for (name, kind) in [("full.cross_entropy", LossKind::CrossEntropy), ("full.squared", LossKind::Squared)] {
            let (_, g) = full_gradient(&params, &batch, &targets, kind)?;
            let fd = finite_diff_gradient(
                |th| {
                    rows.iter()
                        .zip(targets.iter_rows())
                        .map(|(r, t)| ref_loss(&ref_forward(th, arch, D, HIDDEN, C, r), t, kind))
                        .sum::<f64>()
                        / rows.len() as f64
                },
                &full,
                STEP,
            );
            record(name, max_rel_error(&g, &fd));
        }
        let g = input_gradient(&params, &x, &q, LossKind::Kl);
        let fd = finite_diff_gradient(
            |xx| ref_loss(&ref_forward(&full, arch, D, HIDDEN, C, xx), &q, LossKind::Kl),
            &x,
            STEP,
        );
        record("input.kl", max_rel_error(&g, &fd));

        let teacher = draw(seed ^ 0x5EED, i).params;
        let teacher = if teacher.arch == arch { teacher } else { params.clone() };
        for (name, alg) in [
            ("ssl.mean_teacher", SslAlgorithm::MeanTeacher),
            ("ssl.vat", SslAlgorithm::Vat),
            ("ssl.pseudo_label", SslAlgorithm::PseudoLabel),
            ("ssl.entropy_min", SslAlgorithm::EntropyMin),
        ] {
            let cfg = SslLossConfig { tau: 0.0, vat_eps: 0.5, ..SslLossConfig::with_algorithm(alg) };
            let term = unlabeled_term(&params, Some(&teacher), &x, &cfg, i as u64)?;
            let (_, g) = term.last_layer(&params);
            let fd = finite_diff_gradient(
                |w| ref_loss(&ref_forward(&with_last(w), arch, D, HIDDEN, C, &term.input), &term.target, term.kind),
                &full[tail..],
                STEP,
            );
            record(name, max_rel_error(&g, &fd));
        }
    }
    Ok(worst.into_iter().map(|(name, e)| GradientCheck { name, draws, max_rel_error: e }).collect())
}
