//! Baseline selectors: uniform random, per-batch CRAIG (facility location)
//! and per-batch GradMatch (orthogonal matching pursuit with a nonnegative
//! refit). The per-batch methods work on [`BatchedGradients`] and select whole
//! mini-batches; [`coreset_from_batches`] expands them back to point indices.

mod craig;
mod nnls;
mod omp;

pub use craig::craig_select_perbatch;
pub use nnls::nnls;
pub use omp::gradmatch_omp_perbatch;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieve::{Coreset, GradientTable, TraceEntry};
use crate::rng::seeded;

/// Per-batch summed gradients over consecutive batches `[bB, (b+1)B)`.
/// The trailing partial batch is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGradients {
    pub sums: Vec<Vec<f64>>,
    pub members: Vec<Vec<usize>>,
}

impl BatchedGradients {
    pub fn new(grads: &GradientTable, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let count = grads.len() / batch_size;
        if count == 0 {
            return Err(Error::invalid("fewer unlabeled points than one batch"));
        }
        let members: Vec<Vec<usize>> = (0..count).map(|b| (b * batch_size..(b + 1) * batch_size).collect()).collect();
        let sums = crate::par::map_slice(&members, |idx| grads.sum_of(idx));
        Ok(Self { sums, members })
    }

    /// Direct construction from per-batch vectors, each batch holding one point index.
    pub fn from_sums(sums: Vec<Vec<f64>>) -> Result<Self> {
        let width = sums.first().map_or(0, Vec::len);
        if sums.is_empty() || sums.iter().any(|s| s.len() != width) {
            return Err(Error::invalid("batch gradients must be non-empty and equally long"));
        }
        let members = (0..sums.len()).map(|b| vec![b]).collect();
        Ok(Self { sums, members })
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Selected batches with nonnegative weights, in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSelection {
    pub batches: Vec<usize>,
    pub weights: Vec<f64>,
    /// Set when the input carried no signal (all-zero gradients).
    pub degenerate: bool,
    pub trace: Vec<TraceEntry>,
}

/// `k` indices drawn uniformly without replacement from `0..m`.
pub fn random_select(m: usize, k: usize, seed: u64) -> Result<Coreset> {
    if k == 0 || k > m {
        return Err(Error::invalid(format!("budget {k} must lie in 1..={m}")));
    }
    let mut rng = seeded(seed);
    Ok(Coreset::unweighted(sample(&mut rng, m, k).into_vec()))
}

/// Expands selected batches to their member indices; each member carries its batch's weight.
pub fn coreset_from_batches(sel: &BatchSelection, bg: &BatchedGradients) -> Result<Coreset> {
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for (&b, &w) in sel.batches.iter().zip(&sel.weights) {
        let members = bg.members.get(b).ok_or_else(|| Error::invalid(format!("batch {b} out of range")))?;
        indices.extend_from_slice(members);
        weights.extend(std::iter::repeat_n(w, members.len()));
    }
    Ok(Coreset { indices, weights: Some(weights) })
}
