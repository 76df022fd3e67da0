use rand::seq::SliceRandom;

use super::{Dataset, UnlabeledSet};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// The three disjoint parts of an SSL split plus the original row indices of each.
#[derive(Debug, Clone)]
pub struct SslSplit {
    pub labeled: Dataset,
    pub unlabeled: UnlabeledSet,
    pub test: Dataset,
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Splits `ds` into a stratified labeled set of `labels_per_class` points per
/// class, a held-out test set of `round(test_fraction * n)` points, and an
/// unlabeled pool holding the rest (true labels retained as hidden tags).
pub fn split_ssl(ds: &Dataset, labels_per_class: usize, test_fraction: f64, seed: u64) -> Result<SslSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let n = ds.len();
    let counts = ds.class_counts();
    if let Some((c, &have)) = counts.iter().enumerate().find(|(_, &k)| k < labels_per_class) {
        return Err(Error::invalid(format!("class {c} has {have} points, need {labels_per_class} labeled")));
    }
    let n_labeled = labels_per_class * ds.class_count;
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_labeled + n_test >= n {
        return Err(Error::invalid("split leaves no unlabeled points"));
    }

    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut taken = vec![0usize; ds.class_count];
    let mut labeled_idx = Vec::with_capacity(n_labeled);
    let mut rest = Vec::with_capacity(n - n_labeled);
    for &i in &order {
        let c = ds.labels[i];
        if taken[c] < labels_per_class {
            taken[c] += 1;
            labeled_idx.push(i);
        } else {
            rest.push(i);
        }
    }
    let test_idx = rest[..n_test].to_vec();
    let unlabeled_idx = rest[n_test..].to_vec();

    Ok(SslSplit {
        labeled: ds.subset(&labeled_idx),
        unlabeled: UnlabeledSet::from_dataset(&ds.subset(&unlabeled_idx)),
        test: ds.subset(&test_idx),
        labeled_idx,
        unlabeled_idx,
        test_idx,
    })
}
