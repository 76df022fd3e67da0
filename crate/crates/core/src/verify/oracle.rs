//! Straight-line reference evaluations of the one-step set function.
//!
//! Nothing here calls into the model, loss or selector code: features,
//! softmax, cross-entropy and its last-layer gradient are recomputed with
//! explicit loops so the oracles stay independent of what they check.

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::retrieve::{Coreset, GradientTable};

/// Labeled data reduced to last-layer inputs, plus the flat last layer.
#[derive(Debug, Clone)]
pub struct OracleProblem {
    pub h: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub classes: usize,
    pub w0: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub alpha: f64,
    pub lambda: f64,
}

fn naive_dense(weights: &[f64], bias: &[f64], n_in: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; bias.len()];
    for o in 0..bias.len() {
        let mut s = bias[o];
        for i in 0..n_in {
            s += weights[o * n_in + i] * x[i];
        }
        out[o] = s;
    }
    out
}

impl OracleProblem {
    pub fn new(params: &ModelParams, d: &Dataset, grads: &GradientTable, alpha: f64, lambda: f64) -> Result<Self> {
        let classes = params.classes();
        let width = params.feature_dim();
        if grads.width() != classes * (width + 1) {
            return Err(Error::invalid("gradient table width does not match the model"));
        }
        let h = d
            .features
            .iter_rows()
            .map(|x| match &params.hidden {
                None => x.to_vec(),
                Some(hd) => naive_dense(&hd.weights, &hd.bias, hd.n_in, x)
                    .into_iter()
                    .map(|v| if v > 0.0 { v } else { 0.0 })
                    .collect(),
            })
            .collect();
        let mut w0 = params.output.weights.clone();
        w0.extend_from_slice(&params.output.bias);
        let rows = (0..grads.len()).map(|j| grads.row(j).to_vec()).collect();
        Ok(Self { h, y: d.labels.clone(), classes, w0, rows, alpha, lambda })
    }

    fn logits(&self, w: &[f64], h: &[f64]) -> Vec<f64> {
        let width = h.len();
        let mut z = vec![0.0; self.classes];
        for c in 0..self.classes {
            let mut s = w[self.classes * width + c];
            for i in 0..width {
                s += w[c * width + i] * h[i];
            }
            z[c] = s;
        }
        z
    }

    fn log_probs(z: &[f64]) -> Vec<f64> {
        let mut mx = z[0];
        for &v in z {
            if v > mx {
                mx = v;
            }
        }
        let mut s = 0.0;
        for &v in z {
            s += (v - mx).exp();
        }
        let lse = mx + s.ln();
        z.iter().map(|v| v - lse).collect()
    }

    /// Mean labeled cross-entropy at last layer `w`.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for (h, &y) in self.h.iter().zip(&self.y) {
            total -= Self::log_probs(&self.logits(w, h))[y];
        }
        total / self.h.len() as f64
    }

    /// Gradient of [`Self::loss`] with respect to `w`.
    pub fn grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        let n = self.h.len() as f64;
        for (h, &y) in self.h.iter().zip(&self.y) {
            let width = h.len();
            let lp = Self::log_probs(&self.logits(w, h));
            for c in 0..self.classes {
                let dz = lp[c].exp() - if c == y { 1.0 } else { 0.0 };
                for i in 0..width {
                    g[c * width + i] += dz * h[i] / n;
                }
                g[self.classes * width + c] += dz / n;
            }
        }
        g
    }

    /// `θ^S` for the element set `s`.
    pub fn theta_s(&self, s: &[usize]) -> Vec<f64> {
        let g0 = self.grad(&self.w0);
        let mut w = self.w0.clone();
        for i in 0..w.len() {
            w[i] -= self.alpha * g0[i];
            for &j in s {
                w[i] -= self.alpha * self.lambda * self.rows[j][i];
            }
        }
        w
    }

    pub fn value(&self, s: &[usize]) -> f64 {
        -self.loss(&self.theta_s(s))
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }
}

/// Calls `visit` on every size-`k` subset of `0..m` in lexicographic order.
pub fn for_each_subset(m: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        // rightmost position that can still advance
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for t in i..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

fn binomial(m: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Upper limit on the number of subsets [`brute_force_best_subset`] will enumerate.
pub const SUBSET_CAP: f64 = 1e6;

/// Exhaustive maximization of the set function over all size-`k` subsets.
/// Ties keep the lexicographically smallest index list.
pub fn brute_force_best_subset(
    params: &ModelParams,
    d: &Dataset,
    grads: &GradientTable,
    alpha: f64,
    lambda: f64,
    k: usize,
) -> Result<(Coreset, f64)> {
    let p = OracleProblem::new(params, d, grads, alpha, lambda)?;
    brute_force(&p, k)
}

pub fn brute_force(p: &OracleProblem, k: usize) -> Result<(Coreset, f64)> {
    let m = p.m();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={m}")));
    }
    if binomial(m, k) > SUBSET_CAP {
        return Err(Error::invalid(format!("C({m}, {k}) subsets exceed the enumeration cap")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_subset(m, k, |s| {
        let v = p.value(s);
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((s.to_vec(), v));
        }
    });
    let (s, v) = best.expect("at least one subset");
    Ok((Coreset::unweighted(s), v))
}

/// Deterministic full-scan greedy on the first-order gain, ties to the lowest index.
pub fn naive_greedy(p: &OracleProblem, k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let lg = p.grad(&p.theta_s(&chosen));
        let mut best: Option<(usize, f64)> = None;
        for e in 0..p.m() {
            if chosen.contains(&e) {
                continue;
            }
            let mut dot = 0.0;
            for i in 0..lg.len() {
                dot += lg[i] * p.rows[e][i];
            }
            let gain = p.alpha * p.lambda * dot;
            if best.is_none_or(|b| gain > b.1) {
                best = Some((e, gain));
            }
        }
        chosen.push(best.expect("k <= m").0);
    }
    chosen
}

/// Greedy on exact marginal values of the set function, ties to the lowest index.
pub fn exact_greedy(p: &OracleProblem, k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for e in 0..p.m() {
            if chosen.contains(&e) {
                continue;
            }
            let mut s = chosen.clone();
            s.push(e);
            let v = p.value(&s);
            if best.is_none_or(|b| v > b.1) {
                best = Some((e, v));
            }
        }
        chosen.push(best.expect("k <= m").0);
    }
    chosen
}

/// Exhaustive facility-location coverage for per-batch CRAIG checks:
/// `F(S) = Σ_i max_{j∈S} (offset - ‖g_i - g_j‖)`, offset = max pairwise distance.
pub fn coverage(points: &[Vec<f64>], s: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut offset: f64 = 0.0;
    for a in points {
        for b in points {
            offset = offset.max(dist(a, b));
        }
    }
    points.iter().map(|p| s.iter().map(|&j| offset - dist(p, &points[j])).fold(f64::NEG_INFINITY, f64::max)).sum()
}

/// Best coverage over all size-`k` subsets.
pub fn best_coverage(points: &[Vec<f64>], k: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for_each_subset(points.len(), k, |s| best = best.max(coverage(points, s)));
    best
}

/// Row-major matrix of point features used by the instance generator.
pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}
