//! Lawson–Hanson active-set nonnegative least squares on the normal equations.

/// Cholesky solve of `G z = c` restricted to `set`; `None` if the restricted
/// Gram matrix is numerically singular.
fn solve_subset(gram: &[Vec<f64>], c: &[f64], set: &[usize]) -> Option<Vec<f64>> {
    let n = set.len();
    let scale = set.iter().map(|&i| gram[i][i]).fold(0.0, f64::max);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = gram[set[i]][set[j]];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 1e-13 * scale {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (c[set[i]] - s) / l[i][i];
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * z[k]).sum();
        z[i] = (y[i] - s) / l[i][i];
    }
    Some(z)
}

/// Minimizes `‖Σ_j x_j a_j − b‖` over `x ≥ 0`, where `columns[j] = a_j`.
pub fn nnls(columns: &[&[f64]], b: &[f64]) -> Vec<f64> {
    let n = columns.len();
    let gram: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| crate::vecops::dot(columns[i], columns[j])).collect()).collect();
    let c: Vec<f64> = columns.iter().map(|a| crate::vecops::dot(a, b)).collect();
    let tol = 1e-12 * c.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    for _ in 0..3 * n + 3 {
        let w: Vec<f64> = (0..n).map(|i| c[i] - (0..n).map(|j| gram[i][j] * x[j]).sum::<f64>()).collect();
        let mut enter = None;
        for i in 0..n {
            if !passive[i] && !blocked[i] && w[i] > tol && enter.is_none_or(|e: usize| w[i] > w[e]) {
                enter = Some(i);
            }
        }
        let Some(j) = enter else { break };
        passive[j] = true;
        loop {
            let set: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let Some(z) = solve_subset(&gram, &c, &set) else {
                passive[j] = false;
                blocked[j] = true;
                break;
            };
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (&i, &v) in set.iter().zip(&z) {
                    x[i] = v;
                }
                break;
            }
            let mut step = f64::INFINITY;
            for (&i, &v) in set.iter().zip(&z) {
                if v <= 0.0 {
                    step = step.min(x[i] / (x[i] - v));
                }
            }
            for (&i, &v) in set.iter().zip(&z) {
                x[i] += step * (v - x[i]);
                if x[i] <= 1e-15 * (1.0 + v.abs()) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_inside_orthant() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 2.0, 0.0];
        let x = nnls(&[&a, &b], &[3.0, 4.0, 1.0]);
        assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_coefficient_is_clamped() {
        let a = [1.0, 0.0];
        let b = [1.0, 1.0];
        // unconstrained: x = (-1, 2); the NNLS optimum drops column a
        let x = nnls(&[&a, &b], &[-1.0 + 2.0, 2.0]);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_columns_do_not_break_the_solver() {
        let a = [1.0, 1.0];
        let x = nnls(&[&a, &a], &[2.0, 2.0]);
        assert!((x[0] + x[1] - 2.0).abs() < 1e-12);
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}
