use std::f64::consts::PI;

use rand::Rng;

use super::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};

fn linspace(start: f64, end: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (end - start) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| start + step * i as f64)
}

fn add_noise<R: Rng>(rng: &mut R, p: &mut [f64], stddev: f64) {
    if stddev > 0.0 {
        for v in p {
            *v += stddev * standard_normal(rng);
        }
    }
}

/// Two interleaved half-circles in 2-D.
///
/// Class 0 lies on the upper unit half-circle, class 1 on the lower one shifted
/// by `(1, 0.5)`. The first `n / 2` points belong to class 0, the rest to
/// class 1. Gaussian noise is added per coordinate.
pub fn generate_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("two moons needs at least 2 points"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for t in linspace(0.0, PI, n_outer) {
        let mut p = [t.cos(), t.sin()];
        add_noise(&mut rng, &mut p, noise);
        data.extend_from_slice(&p);
        labels.push(0);
    }
    for t in linspace(0.0, PI, n_inner) {
        let mut p = [1.0 - t.cos(), 0.5 - t.sin()];
        add_noise(&mut rng, &mut p, noise);
        data.extend_from_slice(&p);
        labels.push(1);
    }
    Dataset::new(Matrix::new(n, 2, data)?, labels, 2)
}

/// Isotropic Gaussian blobs, one class per center.
///
/// Points are split as evenly as possible across centers; any remainder goes
/// to the lowest-indexed classes. Output is grouped by class.
pub fn generate_blobs(n: usize, centers: &[Vec<f64>], stddev: f64, seed: u64) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::invalid("blobs need at least 2 centers"));
    }
    if !(stddev >= 0.0) {
        return Err(Error::invalid("stddev must be non-negative"));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::invalid("centers must share a positive dimension"));
    }
    if n == 0 {
        return Err(Error::invalid("blobs need at least one point"));
    }
    let c = centers.len();
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        let count = n / c + usize::from(class < n % c);
        for _ in 0..count {
            let mut p = center.clone();
            add_noise(&mut rng, &mut p, stddev);
            data.extend_from_slice(&p);
            labels.push(class);
        }
    }
    Dataset::new(Matrix::new(n, d, data)?, labels, c)
}
