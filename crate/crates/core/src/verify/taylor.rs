//! First-order accuracy of the gain estimate as the step size shrinks.

use crate::error::Result;
use crate::retrieve::{lookahead, set_value, taylor_gain, Coreset, GradientTable, LabeledCe, LabeledObjective};

use super::instances::Instance;
use super::oracle::OracleProblem;

/// A labeled objective that is linear in the last layer: `L(w) = ⟨c, w⟩`.
/// The first-order gain is exact for it.
#[derive(Debug, Clone)]
pub struct LinearProbe(pub Vec<f64>);

impl LabeledObjective for LinearProbe {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        self.0.iter().zip(w).map(|(a, b)| a * b).sum()
    }
    fn value_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        (self.value(w), self.0.clone())
    }
}

/// For each `α`, the largest `|f(S ∪ e) - f(S) - ĝ(e)|` over `e ∉ S`.
pub fn taylor_error_scan<O: LabeledObjective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    grads: &GradientTable,
    base: &[usize],
    lambda: f64,
    alphas: &[f64],
) -> Result<Vec<f64>> {
    let (_, g0) = obj.value_and_grad(theta0);
    let s = Coreset::unweighted(base.to_vec());
    alphas
        .iter()
        .map(|&alpha| {
            let f_s = set_value(obj, theta0, &g0, grads, &s, alpha, lambda);
            let w = lookahead(theta0, &g0, &grads.sum_of(base), alpha, lambda);
            let (_, lg) = obj.value_and_grad(&w);
            let mut worst: f64 = 0.0;
            for e in (0..grads.len()).filter(|e| !base.contains(e)) {
                let mut with_e = base.to_vec();
                with_e.push(e);
                let f_se = set_value(obj, theta0, &g0, grads, &Coreset::unweighted(with_e), alpha, lambda);
                let approx = taylor_gain(&lg, grads.row(e), alpha, lambda)?;
                worst = worst.max((f_se - f_s - approx).abs());
            }
            Ok(worst)
        })
        .collect()
}

/// Scan on a random instance with the labeled cross-entropy objective and base
/// set `{0, 1}`. The exact marginal comes from the oracle; the estimate from the
/// library's lookahead, labeled gradient and gain.
pub fn taylor_scan_instance(inst: &Instance, alphas: &[f64]) -> Result<Vec<f64>> {
    let obj = LabeledCe::new(&inst.params, &inst.labeled)?;
    let theta0 = inst.params.last_layer_flat();
    let (_, g0) = obj.value_and_grad(&theta0);
    let base = [0usize, 1];
    let lambda = inst.spec.lambda;
    alphas
        .iter()
        .map(|&alpha| {
            let oracle = OracleProblem::new(&inst.params, &inst.labeled, &inst.grads, alpha, lambda)?;
            let f_s = oracle.value(&base);
            let (_, lg) = obj.value_and_grad(&lookahead(&theta0, &g0, &inst.grads.sum_of(&base), alpha, lambda));
            let mut worst: f64 = 0.0;
            for e in (0..inst.grads.len()).filter(|e| !base.contains(e)) {
                let exact = oracle.value(&[base[0], base[1], e]) - f_s;
                worst = worst.max((exact - taylor_gain(&lg, inst.grads.row(e), alpha, lambda)?).abs());
            }
            Ok(worst)
        })
        .collect()
}

/// `α_i = 0.1 · 2^{-i}` down to just below `1e-3`.
pub fn default_alphas() -> Vec<f64> {
    (0..8).map(|i| 0.1 * 0.5f64.powi(i)).collect()
}

/// Mean of `error(α_{i+1}) / error(α_i)` over consecutive pairs.
pub fn mean_decay_ratio(errors: &[f64]) -> f64 {
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

#[cfg(test)]
mod tests {
    use super::super::instances::{random_instance, InstanceSpec};
    use super::*;

    #[test]
    fn zero_step_has_zero_error() {
        let inst = random_instance(InstanceSpec::default(), 2).unwrap();
        assert_eq!(taylor_scan_instance(&inst, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn error_decays_quadratically() {
        let inst = random_instance(InstanceSpec::default(), 5).unwrap();
        let errs = taylor_scan_instance(&inst, &default_alphas()).unwrap();
        assert!(mean_decay_ratio(&errs) <= 0.3, "{errs:?}");
    }

    #[test]
    fn linear_probe_is_exact() {
        let inst = random_instance(InstanceSpec::default(), 6).unwrap();
        let probe = LinearProbe((0..inst.grads.width()).map(|i| (i as f64 * 0.37).sin()).collect());
        let errs =
            taylor_error_scan(&probe, &inst.params.last_layer_flat(), &inst.grads, &[0, 1], 1.0, &default_alphas())
                .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-12), "{errs:?}");
    }
}
