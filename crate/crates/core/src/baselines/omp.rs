use super::{nnls, BatchSelection, BatchedGradients};
use crate::error::{Error, Result};
use crate::retrieve::TraceEntry;
use crate::vecops::{axpy, dot, norm};

/// Result of [`gradmatch_omp_perbatch`]; `residual_norms[i]` is the residual
/// after the `i`-th pick (entry 0 is the target norm).
#[derive(Debug, Clone, PartialEq)]
pub struct OmpSelection {
    pub selection: BatchSelection,
    pub residual_norms: Vec<f64>,
}

/// Orthogonal matching pursuit towards the sum of all batch gradients, with a
/// nonnegative least-squares refit after every pick.
pub fn gradmatch_omp_perbatch(bg: &BatchedGradients, k_batches: usize, tol: f64) -> Result<OmpSelection> {
    let nb = bg.len();
    if k_batches == 0 || k_batches > nb {
        return Err(Error::invalid(format!("k_batches {k_batches} must lie in 1..={nb}")));
    }
    let width = bg.sums[0].len();
    let target = crate::vecops::sum_rows(width, bg.sums.iter().map(Vec::as_slice));
    if bg.sums.iter().all(|g| g.iter().all(|&v| v == 0.0)) {
        log::warn!("all batch gradients are zero; returning the first {k_batches} batches with zero weight");
        let selection = BatchSelection {
            batches: (0..k_batches).collect(),
            weights: vec![0.0; k_batches],
            degenerate: true,
            trace: Vec::new(),
        };
        return Ok(OmpSelection { selection, residual_norms: vec![0.0] });
    }
    let mut residual = target.clone();
    let mut res_norm = norm(&residual);
    let mut norms = vec![res_norm];
    let mut batches: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut chosen = vec![false; nb];
    let mut trace = Vec::new();
    while batches.len() < k_batches && res_norm > tol {
        let scores = crate::par::map_range(nb, |b| if chosen[b] { -1.0 } else { dot(&residual, &bg.sums[b]).abs() });
        let pick = crate::vecops::argmax(&scores);
        trace.push(TraceEntry {
            round: batches.len(),
            chosen: pick,
            gain: scores[pick],
            pool_size: nb - batches.len(),
        });
        chosen[pick] = true;
        batches.push(pick);
        let cols: Vec<&[f64]> = batches.iter().map(|&b| bg.sums[b].as_slice()).collect();
        let fitted = nnls(&cols, &target);
        let mut r = target.clone();
        for (c, &w) in cols.iter().zip(&fitted) {
            axpy(-w, c, &mut r);
        }
        let n = norm(&r);
        if n <= res_norm {
            weights = fitted;
            residual = r;
            res_norm = n;
        } else {
            weights.push(0.0);
        }
        norms.push(res_norm);
    }
    let selection = BatchSelection { batches, weights, degenerate: false, trace };
    Ok(OmpSelection { selection, residual_norms: norms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn single_batch_equal_to_target() {
        let bg = BatchedGradients::from_sums(vec![vec![1.0, -2.0, 0.5]]).unwrap();
        let r = gradmatch_omp_perbatch(&bg, 1, 0.0).unwrap();
        assert_eq!(r.selection.batches, vec![0]);
        assert!((r.selection.weights[0] - 1.0).abs() < 1e-14);
        assert!(*r.residual_norms.last().unwrap() < 1e-14);
    }

    #[test]
    fn orthogonal_batches_are_recovered() {
        let sums = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 + i as f64 } else { 0.0 }).collect()).collect();
        let bg = BatchedGradients::from_sums(sums).unwrap();
        let r = gradmatch_omp_perbatch(&bg, 4, 0.0).unwrap();
        assert_eq!(r.selection.batches.len(), 4);
        assert!(r.selection.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn residual_never_increases() {
        let mut rng = seeded(5);
        for _ in 0..30 {
            let sums = (0..8).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let bg = BatchedGradients::from_sums(sums).unwrap();
            let r = gradmatch_omp_perbatch(&bg, 6, 0.0).unwrap();
            assert!(r.residual_norms.windows(2).all(|w| w[1] <= w[0]));
            assert!(r.selection.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn zero_gradients_flag_a_warning() {
        let bg = BatchedGradients::from_sums(vec![vec![0.0; 3]; 5]).unwrap();
        let r = gradmatch_omp_perbatch(&bg, 2, 1e-9).unwrap();
        assert!(r.selection.degenerate);
        assert_eq!(r.selection.batches, vec![0, 1]);
        assert_eq!(r.selection.weights, vec![0.0, 0.0]);
    }
}
