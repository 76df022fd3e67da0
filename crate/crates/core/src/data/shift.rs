use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};

use super::{Dataset, Matrix, UnlabeledSet};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Largest-remainder apportionment of `total` across groups proportional to `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &g in &order {
        if left == 0 {
            break;
        }
        if out[g] < weights[g] {
            out[g] += 1;
            left -= 1;
        }
    }
    out
}

/// Replaces `round(ood_ratio * m)` unlabeled points with points drawn from `ood`.
///
/// The pool size `m` is unchanged. Surviving in-distribution points are chosen
/// per hidden class in proportion to the class counts, so the ID class balance
/// is preserved up to rounding. OOD points get `ood_flags = true` and no hidden
/// label. The result is shuffled.
pub fn inject_ood(u: &UnlabeledSet, ood_ratio: f64, ood: &Dataset, seed: u64) -> Result<UnlabeledSet> {
    if !(0.0..1.0).contains(&ood_ratio) {
        return Err(Error::invalid("ood_ratio must lie in [0, 1)"));
    }
    let m = u.len();
    let n_ood = (ood_ratio * m as f64).round() as usize;
    let prior_hidden: Vec<Option<usize>> = match u.hidden_labels() {
        Some(h) => h.to_vec(),
        None => vec![None; m],
    };
    if n_ood == 0 {
        return UnlabeledSet::new(u.features.clone(), u.hidden_labels().map(<[_]>::to_vec), Some(vec![false; m]));
    }
    if ood.len() < n_ood {
        return Err(Error::invalid(format!("ood dataset has {} points, need {n_ood}", ood.len())));
    }
    if ood.dim() != u.dim() {
        return Err(Error::invalid("ood dataset dimension differs from unlabeled set"));
    }

    let mut rng = seeded(seed);
    let survivors_total = m - n_ood;

    // Group ID points by hidden label; unknown labels form their own group.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut keys: Vec<Option<usize>> = Vec::new();
    for (j, lab) in prior_hidden.iter().enumerate() {
        match keys.iter().position(|k| k == lab) {
            Some(g) => groups[g].push(j),
            None => {
                keys.push(*lab);
                groups.push(vec![j]);
            }
        }
    }
    let quotas = apportion(survivors_total, &groups.iter().map(Vec::len).collect::<Vec<_>>());
    let mut keep = BTreeSet::new();
    for (members, &q) in groups.iter().zip(&quotas) {
        for pick in index::sample(&mut rng, members.len(), q) {
            keep.insert(members[pick]);
        }
    }

    let ood_rows = index::sample(&mut rng, ood.len(), n_ood).into_vec();
    let mut rows: Vec<(Vec<f64>, Option<usize>, bool)> = Vec::with_capacity(m);
    for &j in &keep {
        rows.push((u.point(j).to_vec(), prior_hidden[j], false));
    }
    for &r in &ood_rows {
        rows.push((ood.features.row(r).to_vec(), None, true));
    }
    rows.shuffle(&mut rng);

    let d = u.dim();
    let mut data = Vec::with_capacity(m * d);
    let mut hidden = Vec::with_capacity(m);
    let mut flags = Vec::with_capacity(m);
    for (x, h, f) in rows {
        data.extend_from_slice(&x);
        hidden.push(h);
        flags.push(f);
    }
    UnlabeledSet::new(Matrix::new(m, d, data)?, Some(hidden), Some(flags))
}

/// Subsamples each minority class to `round(ratio * majority_count)` points,
/// where `majority_count` is the largest class count outside `minority`.
/// Majority classes are left untouched; row order is preserved.
pub fn inject_imbalance(ds: &Dataset, minority: &[usize], ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("imbalance ratio must lie in (0, 1]"));
    }
    if let Some(&c) = minority.iter().find(|&&c| c >= ds.class_count) {
        return Err(Error::invalid(format!("minority class {c} out of range")));
    }
    let counts = ds.class_counts();
    let minority: BTreeSet<usize> = minority.iter().copied().collect();
    let majority_count = (0..ds.class_count).filter(|c| !minority.contains(c)).map(|c| counts[c]).max();

    let mut rng = seeded(seed);
    let mut keep = vec![true; ds.len()];
    for &c in &minority {
        let base = majority_count.unwrap_or(counts[c]);
        let target = (ratio * base as f64).round() as usize;
        if target == 0 {
            return Err(Error::invalid(format!("ratio {ratio} leaves class {c} empty")));
        }
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if target >= members.len() {
            continue;
        }
        let chosen: BTreeSet<usize> = index::sample(&mut rng, members.len(), target).into_iter().collect();
        for (k, &i) in members.iter().enumerate() {
            keep[i] = chosen.contains(&k);
        }
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    Ok(ds.subset(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;

    fn pool(m: usize, seed: u64) -> UnlabeledSet {
        let ds = generate_blobs(m, &[vec![0.0, 0.0], vec![4.0, 0.0]], 0.5, seed).unwrap();
        UnlabeledSet::from_dataset(&ds)
    }

    fn far_ood(n: usize) -> Dataset {
        generate_blobs(n, &[vec![20.0, 20.0], vec![-20.0, 20.0]], 1.0, 99).unwrap()
    }

    #[test]
    fn zero_ratio_is_identity() {
        let u = pool(20, 1);
        let out = inject_ood(&u, 0.0, &far_ood(10), 3).unwrap();
        assert_eq!(out.features, u.features);
        assert_eq!(out.ood_flags().unwrap(), vec![false; 20].as_slice());
    }

    #[test]
    fn half_ratio_flags_exactly_half() {
        let out = inject_ood(&pool(20, 1), 0.5, &far_ood(40), 3).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out.ood_count(), 10);
    }

    #[test]
    fn large_pool_flags_three_quarters() {
        let out = inject_ood(&pool(20_000, 2), 0.75, &far_ood(16_000), 5).unwrap();
        assert_eq!(out.len(), 20_000);
        assert_eq!(out.ood_count(), 15_000);
        // surviving ID points keep the 50/50 class balance
        let hidden = out.hidden_labels().unwrap();
        let zeros = hidden.iter().filter(|h| **h == Some(0)).count();
        let ones = hidden.iter().filter(|h| **h == Some(1)).count();
        assert_eq!((zeros, ones), (2500, 2500));
    }

    #[test]
    fn ood_too_small_rejected() {
        assert!(inject_ood(&pool(20, 1), 0.5, &far_ood(4), 3).is_err());
    }

    #[test]
    fn imbalance_counts() {
        let ds = generate_blobs(200, &[vec![0.0], vec![5.0]], 1.0, 0).unwrap();
        let same = inject_imbalance(&ds, &[0], 1.0, 1).unwrap();
        assert_eq!(same, ds);
        let half = inject_imbalance(&ds, &[0], 0.5, 1).unwrap();
        assert_eq!(half.class_counts(), vec![50, 100]);
        let tenth = inject_imbalance(&ds, &[0], 0.1, 1).unwrap();
        assert_eq!(tenth.class_counts(), vec![10, 100]);
    }

    #[test]
    fn imbalance_rejects_empty_class() {
        let ds = generate_blobs(20, &[vec![0.0], vec![5.0]], 1.0, 0).unwrap();
        assert!(inject_imbalance(&ds, &[0], 0.01, 1).is_err());
    }

    #[test]
    fn apportion_preserves_total() {
        assert_eq!(apportion(5, &[3, 3, 3]), vec![2, 2, 1]);
        assert_eq!(apportion(0, &[3, 1]), vec![0, 0]);
        assert_eq!(apportion(4, &[3, 1]), vec![3, 1]);
    }
}
