use super::{BatchSelection, BatchedGradients};
use crate::error::{Error, Result};
use crate::retrieve::TraceEntry;
use crate::vecops::dist;

/// Greedy facility location over batch gradients.
///
/// Similarity is `offset - ‖g_i - g_j‖` with `offset` the largest pairwise
/// distance, so every gain is nonnegative and maximizing coverage minimizes
/// the k-medoids cost. The weight of a selected batch counts the batches
/// whose nearest selected batch it is (ties to the lowest batch index).
pub fn craig_select_perbatch(bg: &BatchedGradients, k_batches: usize) -> Result<BatchSelection> {
    let nb = bg.len();
    if k_batches == 0 || k_batches > nb {
        return Err(Error::invalid(format!("k_batches {k_batches} must lie in 1..={nb}")));
    }
    let d = crate::par::map_range(nb, |i| (0..nb).map(|j| dist(&bg.sums[i], &bg.sums[j])).collect::<Vec<f64>>());
    let offset = d.iter().flatten().copied().fold(0.0, f64::max);
    let mut cover = vec![0.0; nb];
    let mut chosen = vec![false; nb];
    let mut batches = Vec::with_capacity(k_batches);
    let mut trace = Vec::with_capacity(k_batches);
    for round in 0..k_batches {
        let gains = crate::par::map_range(nb, |j| {
            if chosen[j] {
                return f64::NEG_INFINITY;
            }
            (0..nb).map(|i| (offset - d[i][j] - cover[i]).max(0.0)).sum::<f64>()
        });
        let best = crate::vecops::argmax(&gains);
        trace.push(TraceEntry { round, chosen: best, gain: gains[best], pool_size: nb - round });
        chosen[best] = true;
        batches.push(best);
        for i in 0..nb {
            cover[i] = f64::max(cover[i], offset - d[i][best]);
        }
    }
    let mut weights = vec![0.0; k_batches];
    for row in &d {
        let mut best: Option<(usize, usize)> = None;
        for (pos, &j) in batches.iter().enumerate() {
            let better = match best {
                None => true,
                Some((_, b)) => row[j] < row[b] || (row[j] == row[b] && j < b),
            };
            if better {
                best = Some((pos, j));
            }
        }
        weights[best.expect("k_batches >= 1").0] += 1.0;
    }
    Ok(BatchSelection { batches, weights, degenerate: offset == 0.0, trace })
}
