//! Bi-level coreset selection by one-step lookahead and stochastic greedy.
//!
//! The set function is `f(S) = -L_S(D, θ^S)` where `θ^S` moves only the last
//! layer: `θ^S = θ - α ∇L_S(D, θ) - α λ Σ_{j∈S} m_j ∇l_u(x_j, θ)`. Greedy
//! rounds score candidates with the first-order gain
//! `α λ ⟨∇L_S(D, θ^S), m_e ∇l_u(x_e, θ)⟩`, computing the labeled gradient at
//! `θ^S` once per round.

use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{last_layer_gradient_from_features, LossKind, ModelParams};
use crate::rng::{derive_seed, seeded, stream};
use crate::ssl::{point_seed, unlabeled_term, MaskVector, SslLossConfig};
use crate::vecops::{axpy, dot};

/// Per-element masked last-layer gradients, one row per unlabeled point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable(pub Matrix);

impl GradientTable {
    pub fn new(rows: Matrix) -> Result<Self> {
        if !rows.is_finite() {
            return Err(Error::invalid("gradient table contains non-finite values"));
        }
        Ok(Self(rows))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.0.row(j)
    }

    /// `Σ_{j ∈ idx} row_j`, summed in the given order.
    pub fn sum_of(&self, idx: &[usize]) -> Vec<f64> {
        crate::vecops::sum_rows(self.width(), idx.iter().map(|&j| self.row(j)))
    }
}

/// Masked per-element gradients of the configured unlabeled loss at `params`.
/// Point `j` uses the seed `point_seed(seed, j)`.
pub fn gradient_table(
    params: &ModelParams,
    teacher: Option<&ModelParams>,
    u: &UnlabeledSet,
    cfg: &SslLossConfig,
    seed: u64,
) -> Result<(GradientTable, MaskVector)> {
    if u.dim() != params.input_dim() {
        return Err(Error::invalid("unlabeled set width does not match the model"));
    }
    let rows = crate::par::map_range(u.len(), |j| {
        let term = unlabeled_term(params, teacher, u.point(j), cfg, point_seed(seed, j)).expect("width checked");
        let mask = term.mask;
        (term.last_layer(params).1 .0, mask)
    });
    let mask = MaskVector(rows.iter().map(|r| r.1).collect());
    let data: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    let table = GradientTable::new(Matrix::new(u.len(), params.last_layer_len(), data)?)?;
    Ok((table, mask))
}

/// Selected unlabeled indices in selection order, with optional per-index weights
/// (absent means unit weight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Coreset {
    pub fn unweighted(indices: Vec<usize>) -> Self {
        Self { indices, weights: None }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Weight of the `pos`-th entry.
    pub fn weight(&self, pos: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[pos])
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let mut seen = vec![false; m];
        for &i in &self.indices {
            if i >= m || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("coreset index {i} out of range or repeated")));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.indices.len() || w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid("coreset weights must be finite, nonnegative, one per index"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorConfig {
    pub budget: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub alpha: f64,
    pub lambda: f64,
}

impl SelectorConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.budget == 0 || self.budget > m {
            return Err(Error::invalid(format!("budget {} must lie in 1..={m}", self.budget)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Per-round candidate sample size before clamping to the pool: `⌈m ln(1/ε)⌉`.
    pub fn sample_size(&self, m: usize) -> usize {
        (m as f64 * (1.0 / self.epsilon).ln()).ceil() as usize
    }
}

/// The labeled loss as a function of the flat last layer.
pub trait LabeledObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, last_layer: &[f64]) -> f64;
    fn value_and_grad(&self, last_layer: &[f64]) -> (f64, Vec<f64>);
}

/// Mean cross-entropy over the labeled set, with last-layer inputs precomputed.
#[derive(Debug, Clone)]
pub struct LabeledCe {
    features: Matrix,
    targets: Matrix,
    classes: usize,
}

impl LabeledCe {
    pub fn new(params: &ModelParams, d: &Dataset) -> Result<Self> {
        if d.dim() != params.input_dim() || d.class_count > params.classes() {
            return Err(Error::invalid("labeled set does not match the model"));
        }
        if d.is_empty() {
            return Err(Error::invalid("labeled set is empty"));
        }
        let rows: Vec<Vec<f64>> = d.features.iter_rows().map(|x| params.features(x)).collect();
        let c = params.classes();
        let mut targets = Matrix::zeros(d.len(), c);
        for (i, &y) in d.labels.iter().enumerate() {
            targets.row_mut(i)[y] = 1.0;
        }
        Ok(Self { features: Matrix::from_rows(&rows)?, targets, classes: c })
    }

    fn logits(&self, w: &[f64], h: &[f64]) -> Vec<f64> {
        let width = h.len();
        let bias = &w[self.classes * width..];
        (0..self.classes).map(|c| dot(&w[c * width..(c + 1) * width], h) + bias[c]).collect()
    }
}

impl LabeledObjective for LabeledCe {
    fn dim(&self) -> usize {
        self.classes * (self.features.cols() + 1)
    }

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.features.rows();
        let losses = crate::par::map_range(n, |i| {
            let z = self.logits(w, self.features.row(i));
            let lsm = crate::model::log_softmax(&z);
            -dot(&lsm, self.targets.row(i))
        });
        losses.iter().sum::<f64>() / n as f64
    }

    fn value_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let n = self.features.rows();
        let per = crate::par::map_range(n, |i| {
            let h = self.features.row(i);
            let z = self.logits(w, h);
            last_layer_gradient_from_features(h, &z, self.targets.row(i), LossKind::CrossEntropy)
        });
        let mut g = vec![0.0; self.dim()];
        let mut loss = 0.0;
        for (l, gi) in &per {
            loss += l;
            axpy(1.0, gi, &mut g);
        }
        let inv = 1.0 / n as f64;
        crate::vecops::scale(&mut g, inv);
        (loss * inv, g)
    }
}

/// Lookahead point for a given summed (weighted) element gradient.
pub fn lookahead(theta0: &[f64], labeled_grad0: &[f64], summed: &[f64], alpha: f64, lambda: f64) -> Vec<f64> {
    let mut w = theta0.to_vec();
    axpy(-alpha, labeled_grad0, &mut w);
    axpy(-alpha * lambda, summed, &mut w);
    w
}

/// `f(S)` for a generic labeled objective, with `θ_0` and `∇L_S(θ_0)` supplied.
pub fn set_value<O: LabeledObjective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    labeled_grad0: &[f64],
    grads: &GradientTable,
    s: &Coreset,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let mut summed = vec![0.0; grads.width()];
    for (pos, &j) in s.indices.iter().enumerate() {
        axpy(s.weight(pos), grads.row(j), &mut summed);
    }
    -obj.value(&lookahead(theta0, labeled_grad0, &summed, alpha, lambda))
}

/// `f(S) = -L_S(D, θ^S)` evaluated from scratch.
pub fn exact_set_value(
    params: &ModelParams,
    s: &Coreset,
    d: &Dataset,
    grads: &GradientTable,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    s.validate(grads.len())?;
    if grads.width() != params.last_layer_len() {
        return Err(Error::invalid("gradient table width does not match the model's last layer"));
    }
    let obj = LabeledCe::new(params, d)?;
    let theta0 = params.last_layer_flat();
    let (_, g0) = obj.value_and_grad(&theta0);
    Ok(set_value(&obj, &theta0, &g0, grads, s, alpha, lambda))
}

/// First-order marginal gain `α λ ⟨labeled_grad, element_grad⟩`.
pub fn taylor_gain(labeled_grad_at_theta_s: &[f64], element_grad: &[f64], alpha: f64, lambda: f64) -> Result<f64> {
    if labeled_grad_at_theta_s.len() != element_grad.len() {
        return Err(Error::invalid("gradient lengths differ"));
    }
    Ok(alpha * lambda * dot(labeled_grad_at_theta_s, element_grad))
}

/// One line of the selection trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub chosen: usize,
    pub gain: f64,
    pub pool_size: usize,
}

/// Writes a trace as JSON lines.
pub fn write_trace<W: Write>(trace: &[TraceEntry], mut w: W) -> Result<()> {
    for e in trace {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub coreset: Coreset,
    pub trace: Vec<TraceEntry>,
}

/// Stochastic greedy over a generic labeled objective.
///
/// Each round samples `min(⌈m ln(1/ε)⌉, |pool|)` candidates without
/// replacement from the unselected pool and adds the best-scoring one (ties
/// to the lowest index), even when every gain is negative.
pub fn greedy_select_with<O: LabeledObjective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    grads: &GradientTable,
    cfg: &SelectorConfig,
) -> Result<Selection> {
    let m = grads.len();
    cfg.validate(m)?;
    if obj.dim() != grads.width() || theta0.len() != grads.width() {
        return Err(Error::invalid("objective, parameters and gradient table disagree in width"));
    }
    let (_, g0) = obj.value_and_grad(theta0);
    let target = cfg.sample_size(m);
    let mut in_pool = vec![true; m];
    let mut pool_size = m;
    let mut summed = vec![0.0; grads.width()];
    let mut chosen = Vec::with_capacity(cfg.budget);
    let mut trace = Vec::with_capacity(cfg.budget);
    for round in 0..cfg.budget {
        let w = lookahead(theta0, &g0, &summed, cfg.alpha, cfg.lambda);
        let (_, lg) = obj.value_and_grad(&w);
        let pool: Vec<usize> = (0..m).filter(|&j| in_pool[j]).collect();
        let s = target.min(pool_size);
        let candidates: Vec<usize> = if s >= pool_size {
            pool
        } else {
            let mut rng = seeded(derive_seed(cfg.seed, stream::SAMPLE, round as u64));
            let mut picked: Vec<usize> = sample(&mut rng, pool_size, s).into_iter().map(|i| pool[i]).collect();
            picked.sort_unstable();
            picked
        };
        let scale = cfg.alpha * cfg.lambda;
        let gains = crate::par::map_slice(&candidates, |&j| scale * dot(&lg, grads.row(j)));
        let mut best = 0;
        for (i, &g) in gains.iter().enumerate().skip(1) {
            if g > gains[best] {
                best = i;
            }
        }
        let e = candidates[best];
        trace.push(TraceEntry { round, chosen: e, gain: gains[best], pool_size });
        in_pool[e] = false;
        pool_size -= 1;
        axpy(1.0, grads.row(e), &mut summed);
        chosen.push(e);
    }
    Ok(Selection { coreset: Coreset::unweighted(chosen), trace })
}

/// Stochastic greedy with the labeled cross-entropy objective of `d`.
pub fn greedy_select(
    params: &ModelParams,
    d: &Dataset,
    grads: &GradientTable,
    cfg: &SelectorConfig,
) -> Result<Selection> {
    let obj = LabeledCe::new(params, d)?;
    greedy_select_with(&obj, &params.last_layer_flat(), grads, cfg)
}

/// Mask, gradient table and greedy selection in one call. The table is built
/// with seed `derive_seed(sel_cfg.seed, SELECT, 0)`.
pub fn select_retrieve(
    params: &ModelParams,
    teacher: Option<&ModelParams>,
    d: &Dataset,
    u: &UnlabeledSet,
    loss_cfg: &SslLossConfig,
    sel_cfg: &SelectorConfig,
) -> Result<Selection> {
    sel_cfg.validate(u.len())?;
    let (grads, _) = gradient_table(params, teacher, u, loss_cfg, derive_seed(sel_cfg.seed, stream::SELECT, 0))?;
    greedy_select(params, d, &grads, sel_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::ssl::SslAlgorithm;
    use rand::Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn instance(seed: u64, n: usize, m: usize) -> (ModelParams, Dataset, GradientTable) {
        let mut rng = seeded(seed);
        let p = ModelParams::init(Architecture::Linear, 2, 0, 2, seed).unwrap();
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        let g: Vec<f64> = (0..m * p.last_layer_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        (p.clone(), d, GradientTable::new(Matrix::new(m, p.last_layer_len(), g).unwrap()).unwrap())
    }

    fn cfg(k: usize) -> SelectorConfig {
        SelectorConfig { budget: k, epsilon: 0.01, seed: 3, alpha: 0.1, lambda: 1.0 }
    }

    #[test]
    fn taylor_gain_arithmetic() {
        assert!((taylor_gain(&[1.0, 2.0], &[3.0, -1.0], 0.1, 2.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(taylor_gain(&[1.0, 0.0], &[0.0, 5.0], 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(taylor_gain(&[1.0, 0.0], &[0.0, 0.0], 1.0, 1.0).unwrap(), 0.0);
        assert!(taylor_gain(&[1.0], &[1.0, 2.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn empty_set_without_motion_is_negative_loss() {
        let (p, d, g) = instance(1, 5, 4);
        let v = exact_set_value(&p, &Coreset::unweighted(vec![]), &d, &g, 0.0, 1.0).unwrap();
        let logits = p.forward(&d.features).unwrap();
        let l = crate::model::ce_loss(&logits, crate::model::Targets::Classes(&d.labels)).unwrap();
        assert!((v + l).abs() < 1e-14);
    }

    #[test]
    fn zero_row_leaves_value_unchanged() {
        let (p, d, g) = instance(2, 5, 4);
        let mut m = g.0.clone();
        m.row_mut(2).fill(0.0);
        let g = GradientTable::new(m).unwrap();
        let a = exact_set_value(&p, &Coreset::unweighted(vec![0]), &d, &g, 0.3, 1.0).unwrap();
        let b = exact_set_value(&p, &Coreset::unweighted(vec![0, 2]), &d, &g, 0.3, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_equals_m_takes_everything() {
        let (p, d, g) = instance(3, 4, 6);
        let mut c = cfg(6);
        c.epsilon = 0.9;
        let mut sel = greedy_select(&p, &d, &g, &c).unwrap().coreset.indices;
        sel.sort_unstable();
        assert_eq!(sel, (0..6).collect::<Vec<_>>());
        assert!(greedy_select(&p, &d, &g, &cfg(7)).is_err());
    }

    #[test]
    fn trace_and_round_counter() {
        struct Counting<'a>(LabeledCe, &'a AtomicUsize);
        impl LabeledObjective for Counting<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn value(&self, w: &[f64]) -> f64 {
                self.0.value(w)
            }
            fn value_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
                self.1.fetch_add(1, Ordering::SeqCst);
                self.0.value_and_grad(w)
            }
        }
        let (p, d, g) = instance(4, 6, 9);
        let calls = AtomicUsize::new(0);
        let obj = Counting(LabeledCe::new(&p, &d).unwrap(), &calls);
        let sel = greedy_select_with(&obj, &p.last_layer_flat(), &g, &cfg(4)).unwrap();
        // one evaluation at θ_t for the lookahead base, then one per round
        assert_eq!(calls.load(Ordering::SeqCst), 1 + 4);
        assert_eq!(sel.trace.len(), 4);
        assert_eq!(sel.trace.iter().map(|t| t.pool_size).collect::<Vec<_>>(), vec![9, 8, 7, 6]);
        let mut buf = Vec::new();
        write_trace(&sel.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("{\"round\":0,\"chosen\":"));
    }

    #[test]
    fn small_epsilon_sampling_is_deterministic_per_seed() {
        let (p, d, g) = instance(5, 6, 40);
        let mut c = cfg(5);
        c.epsilon = 0.97;
        let a = greedy_select(&p, &d, &g, &c).unwrap();
        assert_eq!(a, greedy_select(&p, &d, &g, &c).unwrap());
        assert!(a.trace.iter().all(|t| t.pool_size >= 36));
    }

    #[test]
    fn all_zero_gradients_pick_first_k() {
        let (p, d, _) = instance(6, 6, 8);
        let g = GradientTable::new(Matrix::zeros(8, p.last_layer_len())).unwrap();
        let sel = greedy_select(&p, &d, &g, &cfg(3)).unwrap();
        assert_eq!(sel.coreset.indices, vec![0, 1, 2]);
    }

    #[test]
    fn retrieve_pipeline_is_deterministic() {
        let (p, d, _) = instance(7, 6, 1);
        let mut rng = seeded(70);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let u = UnlabeledSet::new(Matrix::from_rows(&rows).unwrap(), None, None).unwrap();
        let loss = SslLossConfig { vat_eps: 0.3, ..SslLossConfig::default() };
        let a = select_retrieve(&p, None, &d, &u, &loss, &cfg(5)).unwrap();
        assert_eq!(a, select_retrieve(&p, None, &d, &u, &loss, &cfg(5)).unwrap());
        a.coreset.validate(20).unwrap();
        assert_eq!(a.coreset.len(), 5);
        let flat = SslLossConfig { vat_eps: 0.0, ..loss };
        assert_eq!(select_retrieve(&p, None, &d, &u, &flat, &cfg(5)).unwrap().coreset.indices, vec![0, 1, 2, 3, 4]);
        let _ = SslAlgorithm::Vat;
    }
}
