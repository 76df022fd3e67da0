//! Submodularity-ratio measurement on the transformed monotone objective.
//!
//! With `g_ijc` the class-`c` weight part of element `j`'s gradient dotted
//! with labeled point `x_i` (bias excluded), the construction is
//!
//! * `g_m = min g`, `ĝ = g - g_m + 1` (so `ĝ ≥ 1`)
//! * `h_ic = exp((θ^c - α ∇L_S^c)ᵀ x_i)`, `H_ic = h_ic · exp(k (g_m - 1))`
//! * `f₂(S) = -Σ_i log Σ_c H_ic exp(-α λ Σ_{j∈S} ĝ_ijc)`
//!
//! and the measured quantity is `min f₂(e | X) / f₂(e | Y)` over all nested
//! `X ⊆ Y` and `e ∉ Y`. `k` is taken as `m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossKind;

use super::instances::Instance;
use super::oracle::OracleProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodReport {
    pub min_ratio: f64,
    pub bound: f64,
    pub instances: usize,
    pub comparisons: u64,
}

/// Lower bound on the ratio for features with norm at most `radius`.
pub fn ratio_bound(kind: LossKind, radius: f64) -> f64 {
    let r2 = radius * radius;
    match kind {
        LossKind::Squared => 1.0 / (r2 + 1.0),
        _ => 1.0 / (2.0 * r2 + 1.0),
    }
}

fn lse(v: &[f64]) -> f64 {
    let mx = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Minimum marginal-gain ratio of `f₂` on one instance, and the number of comparisons made.
pub fn instance_min_ratio(inst: &Instance) -> Result<(f64, u64)> {
    let m = inst.grads.len();
    if m > 16 {
        return Err(Error::invalid("submodularity measurement enumerates 2^m subsets; keep m <= 16"));
    }
    let c = inst.params.classes();
    let d = inst.params.feature_dim();
    let xs: Vec<&[f64]> = inst.labeled.features.iter_rows().collect();
    let n = xs.len();
    // g[j][i][c]
    let g: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|j| {
            let row = inst.grads.row(j);
            xs.iter().map(|x| (0..c).map(|cc| (0..d).map(|t| row[cc * d + t] * x[t]).sum()).collect()).collect()
        })
        .collect();
    let g_m = g.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min);
    let g_hat: Vec<Vec<Vec<f64>>> =
        g.iter().map(|gj| gj.iter().map(|gi| gi.iter().map(|v| v - g_m + 1.0).collect()).collect()).collect();

    let (alpha, lambda) = (inst.spec.alpha, inst.spec.lambda);
    let oracle = OracleProblem::new(&inst.params, &inst.labeled, &inst.grads, alpha, lambda)?;
    let grad0 = oracle.grad(&oracle.w0);
    let k = m as f64;
    let log_h: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            (0..c)
                .map(|cc| {
                    let lin: f64 = (0..d).map(|t| (oracle.w0[cc * d + t] - alpha * grad0[cc * d + t]) * x[t]).sum();
                    lin + k * (g_m - 1.0)
                })
                .collect()
        })
        .collect();

    let total = 1usize << m;
    let mut acc = vec![vec![0.0; n * c]; total];
    let mut f2 = vec![0.0; total];
    for mask in 0..total {
        if mask > 0 {
            let j = mask.trailing_zeros() as usize;
            let prev = mask & (mask - 1);
            let mut a = acc[prev].clone();
            for i in 0..n {
                for cc in 0..c {
                    a[i * c + cc] += g_hat[j][i][cc];
                }
            }
            acc[mask] = a;
        }
        let mut val = 0.0;
        let mut terms = vec![0.0; c];
        for i in 0..n {
            for cc in 0..c {
                terms[cc] = log_h[i][cc] - alpha * lambda * acc[mask][i * c + cc];
            }
            val -= lse(&terms);
        }
        f2[mask] = val;
    }

    let mut min_ratio = f64::INFINITY;
    let mut count = 0u64;
    for y in 0..total {
        // every submask x of y, including y itself and the empty set
        let mut x = y;
        loop {
            for e in 0..m {
                let bit = 1 << e;
                if y & bit != 0 {
                    continue;
                }
                let gx = f2[x | bit] - f2[x];
                let gy = f2[y | bit] - f2[y];
                min_ratio = min_ratio.min(gx / gy);
                count += 1;
            }
            if x == 0 {
                break;
            }
            x = (x - 1) & y;
        }
    }
    Ok((min_ratio, count))
}

/// Minimum ratio over all instances, with the bound for `kind` at the
/// largest instance radius.
pub fn measure_submod_ratio(instances: &[Instance], kind: LossKind) -> Result<SubmodReport> {
    let per = crate::par::map_slice(instances, instance_min_ratio);
    let mut min_ratio = f64::INFINITY;
    let mut comparisons = 0;
    for r in per {
        let (v, c) = r?;
        min_ratio = min_ratio.min(v);
        comparisons += c;
    }
    let radius = instances.iter().map(|i| i.spec.radius).fold(0.0, f64::max);
    Ok(SubmodReport { min_ratio, bound: ratio_bound(kind, radius), instances: instances.len(), comparisons })
}
