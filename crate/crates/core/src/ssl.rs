//! Unlabeled losses and masks.
//!
//! Every supported loss reduces to the same shape: an input at which the
//! student is evaluated, a stopped target distribution, a [`LossKind`], and a
//! mask bit. [`unlabeled_term`] builds that tuple; the per-algorithm functions
//! below are thin wrappers that also return the loss value and the last-layer
//! gradient.
//!
//! | algorithm      | input        | target              | kind     | mask              |
//! |----------------|--------------|---------------------|----------|-------------------|
//! | mean teacher   | `x`          | teacher `p(x)`      | squared  | 1                 |
//! | VAT            | `x + d̂`      | `p(x)`              | KL       | 1                 |
//! | pseudo-label   | strong view  | one-hot argmax weak | CE       | `max p(weak) ≥ τ` |
//! | entropy        | `x`          | (none)              | entropy  | 1                 |

use serde::{Deserialize, Serialize};

use crate::data::UnlabeledSet;
use crate::error::{Error, Result};
use crate::model::{
    input_gradient, last_layer_gradient_from_features, loss_and_logit_grad, softmax, GradientVector, LossKind,
    ModelParams,
};
use crate::rng::{derive_seed, gaussian_vec, seeded, stream};
use crate::vecops::{argmax, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslAlgorithm {
    MeanTeacher,
    Vat,
    PseudoLabel,
    EntropyMin,
}

/// Unlabeled-loss settings.
///
/// Defaults: `vat_eps = 1.0`, `vat_xi = 1e-6`, `vat_power_iters = 1`,
/// `tau = 0.95`, `sigma_weak = 0.05`, `sigma_strong = 0.3`, `ema_decay = 0.99`.
/// Perturbation scales are in data units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslLossConfig {
    pub algorithm: SslAlgorithm,
    pub vat_eps: f64,
    pub vat_xi: f64,
    pub vat_power_iters: usize,
    pub tau: f64,
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub ema_decay: f64,
}

impl Default for SslLossConfig {
    fn default() -> Self {
        Self {
            algorithm: SslAlgorithm::Vat,
            vat_eps: 1.0,
            vat_xi: 1e-6,
            vat_power_iters: 1,
            tau: 0.95,
            sigma_weak: 0.05,
            sigma_strong: 0.3,
            ema_decay: 0.99,
        }
    }
}

impl SslLossConfig {
    pub fn with_algorithm(algorithm: SslAlgorithm) -> Self {
        Self { algorithm, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.vat_eps) || !(self.vat_xi.is_finite() && self.vat_xi > 0.0) {
            return Err(Error::invalid("vat_eps must be >= 0 and vat_xi > 0"));
        }
        if self.vat_power_iters == 0 {
            return Err(Error::invalid("vat_power_iters must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0, 1]"));
        }
        if !nonneg(self.sigma_weak) || !nonneg(self.sigma_strong) {
            return Err(Error::invalid("noise scales must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema_decay must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Binary per-point inclusion mask `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskVector(pub Vec<bool>);

impl MaskVector {
    pub fn ones(m: usize) -> Self {
        Self(vec![true; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn value(&self, j: usize) -> f64 {
        if self.0[j] {
            1.0
        } else {
            0.0
        }
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Exponential-moving-average copy of the student.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTeacher {
    pub params: ModelParams,
    pub decay: f64,
}

impl EmaTeacher {
    pub fn new(student: &ModelParams, decay: f64) -> Self {
        Self { params: student.clone(), decay }
    }
}

/// `teacher <- decay * teacher + (1 - decay) * student`, every parameter.
pub fn ema_update(teacher: &mut EmaTeacher, student: &ModelParams) -> Result<()> {
    if teacher.params.num_params() != student.num_params() || teacher.params.arch != student.arch {
        return Err(Error::invalid("teacher and student architectures differ"));
    }
    let d = teacher.decay;
    let mixed: Vec<f64> =
        teacher.params.flat().iter().zip(student.flat()).map(|(t, s)| d * t + (1.0 - d) * s).collect();
    teacher.params.set_flat(&mixed)
}

/// Seed for unlabeled point `j` under a per-call base seed. Using the same base
/// in [`compute_mask`] and in the per-point losses makes their views agree.
pub fn point_seed(base: u64, j: usize) -> u64 {
    derive_seed(base, stream::UNLABELED_POINT, j as u64)
}

fn perturbed(x: &[f64], rng: &mut crate::rng::SeededRng, sigma: f64) -> Vec<f64> {
    let noise = gaussian_vec(rng, x.len(), sigma);
    x.iter().zip(noise).map(|(a, b)| a + b).collect()
}

/// Weak view, strong view, pseudo-label and mask bit, drawn in that order from `seed`.
fn pseudo_label_views(params: &ModelParams, x: &[f64], cfg: &SslLossConfig, seed: u64) -> (Vec<f64>, usize, bool) {
    let mut rng = seeded(seed);
    let weak = perturbed(x, &mut rng, cfg.sigma_weak);
    let strong = perturbed(x, &mut rng, cfg.sigma_strong);
    let p = params.predict_proba(&weak);
    let label = argmax(&p);
    let confident = p[label] >= cfg.tau;
    (strong, label, confident)
}

/// Mask for every unlabeled point: all ones except under pseudo-labeling,
/// where `m_j = 1` iff the weak-view confidence reaches `tau`.
pub fn compute_mask(params: &ModelParams, u: &UnlabeledSet, cfg: &SslLossConfig, seed: u64) -> MaskVector {
    match cfg.algorithm {
        SslAlgorithm::PseudoLabel => MaskVector(crate::par::map_range(u.len(), |j| {
            pseudo_label_views(params, u.point(j), cfg, point_seed(seed, j)).2
        })),
        _ => MaskVector::ones(u.len()),
    }
}

/// Direction of (approximately) steepest KL increase around `x`, scaled to `vat_eps`.
pub fn vat_perturbation(params: &ModelParams, x: &[f64], cfg: &SslLossConfig, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut init = gaussian_vec(&mut rng, x.len(), 1.0);
    let n0 = norm(&init);
    if n0 == 0.0 {
        init = vec![0.0; x.len()];
        init[0] = 1.0;
    } else {
        crate::vecops::scale(&mut init, 1.0 / n0);
    }
    let q = params.predict_proba(x);
    let mut d = init.clone();
    let mut flat = false;
    for _ in 0..cfg.vat_power_iters {
        let probe: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + cfg.vat_xi * b).collect();
        let g = input_gradient(params, &probe, &q, LossKind::Kl);
        let n = norm(&g);
        if n == 0.0 || !n.is_finite() {
            flat = true;
            break;
        }
        d = g.into_iter().map(|v| v / n).collect();
    }
    let dir = if flat { init } else { d };
    dir.into_iter().map(|v| cfg.vat_eps * v).collect()
}

/// One unlabeled loss term reduced to (input, stopped target, kind, mask).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledTerm {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub kind: LossKind,
    pub mask: bool,
}

impl UnlabeledTerm {
    /// Loss value and last-layer gradient, both zeroed when masked out.
    pub fn last_layer(&self, params: &ModelParams) -> (f64, GradientVector) {
        let h = params.features(&self.input);
        let z = params.output.apply(&h);
        let (loss, g) = last_layer_gradient_from_features(&h, &z, &self.target, self.kind);
        if self.mask {
            (loss, GradientVector(g))
        } else {
            (0.0, GradientVector(vec![0.0; g.len()]))
        }
    }

    /// Loss value and full-parameter gradient, zeroed when masked out.
    pub fn full(&self, params: &ModelParams) -> (f64, Vec<f64>) {
        if !self.mask {
            return (0.0, vec![0.0; params.num_params()]);
        }
        crate::model::point_gradient(params, &self.input, &self.target, self.kind)
    }
}

/// Builds the loss term for one unlabeled point. `teacher` is only consulted by
/// mean teacher; without one the student acts as its own teacher.
pub fn unlabeled_term(
    params: &ModelParams,
    teacher: Option<&ModelParams>,
    x: &[f64],
    cfg: &SslLossConfig,
    seed: u64,
) -> Result<UnlabeledTerm> {
    if x.len() != params.input_dim() {
        return Err(Error::invalid(format!("point has {} features, model expects {}", x.len(), params.input_dim())));
    }
    Ok(match cfg.algorithm {
        SslAlgorithm::MeanTeacher => {
            let t = teacher.unwrap_or(params);
            UnlabeledTerm { input: x.to_vec(), target: t.predict_proba(x), kind: LossKind::Squared, mask: true }
        }
        SslAlgorithm::Vat => {
            let d = vat_perturbation(params, x, cfg, seed);
            let input = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            UnlabeledTerm { input, target: params.predict_proba(x), kind: LossKind::Kl, mask: true }
        }
        SslAlgorithm::PseudoLabel => {
            let (strong, label, mask) = pseudo_label_views(params, x, cfg, seed);
            let mut target = vec![0.0; params.classes()];
            target[label] = 1.0;
            UnlabeledTerm { input: strong, target, kind: LossKind::CrossEntropy, mask }
        }
        SslAlgorithm::EntropyMin => {
            UnlabeledTerm { input: x.to_vec(), target: Vec::new(), kind: LossKind::Entropy, mask: true }
        }
    })
}

/// `‖p_student(x) - p_teacher(x)‖²` and its last-layer gradient, teacher held constant.
pub fn mean_teacher_loss_grad(params: &ModelParams, teacher: &EmaTeacher, x: &[f64]) -> Result<(f64, GradientVector)> {
    let cfg = SslLossConfig::with_algorithm(SslAlgorithm::MeanTeacher);
    Ok(unlabeled_term(params, Some(&teacher.params), x, &cfg, 0)?.last_layer(params))
}

/// `KL(p(x) ‖ p(x + d̂))` with `p(x)` stopped, and its last-layer gradient.
pub fn vat_loss_grad(params: &ModelParams, x: &[f64], cfg: &SslLossConfig, seed: u64) -> Result<(f64, GradientVector)> {
    let cfg = SslLossConfig { algorithm: SslAlgorithm::Vat, ..cfg.clone() };
    Ok(unlabeled_term(params, None, x, &cfg, seed)?.last_layer(params))
}

/// Masked cross-entropy of the strong view against the weak view's hard label.
pub fn pseudo_label_loss_grad(
    params: &ModelParams,
    x: &[f64],
    cfg: &SslLossConfig,
    seed: u64,
) -> Result<(f64, GradientVector, bool)> {
    let cfg = SslLossConfig { algorithm: SslAlgorithm::PseudoLabel, ..cfg.clone() };
    let term = unlabeled_term(params, None, x, &cfg, seed)?;
    let (loss, g) = term.last_layer(params);
    Ok((loss, g, term.mask))
}

/// Prediction entropy `H(p(x))` and its last-layer gradient.
pub fn entropy_loss_grad(params: &ModelParams, x: &[f64]) -> Result<(f64, GradientVector)> {
    let cfg = SslLossConfig::with_algorithm(SslAlgorithm::EntropyMin);
    Ok(unlabeled_term(params, None, x, &cfg, 0)?.last_layer(params))
}

/// Loss value of a term re-evaluated at `params` with its target kept fixed.
/// Used by the finite-difference checks.
pub fn term_loss(params: &ModelParams, term: &UnlabeledTerm) -> f64 {
    if !term.mask {
        return 0.0;
    }
    loss_and_logit_grad(&params.logits(&term.input), &term.target, term.kind).0
}

/// Convenience for tests and probes: probabilities of the student at `x`.
pub fn probs(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    softmax(&params.logits(x))
}
