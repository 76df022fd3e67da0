//! Oracles and the verification suite.
//!
//! The oracles ([`oracle`]) evaluate the set function with their own
//! arithmetic; the checks here compare library output against them, against
//! finite differences, or against the stated approximation bounds.

pub mod finite_diff;
pub mod instances;
pub mod oracle;
pub mod submod;
pub mod taylor;

pub use finite_diff::{check_gradients, finite_diff_gradient, max_rel_error, GradientCheck};
pub use instances::{random_instance, Instance, InstanceSpec};
pub use oracle::{brute_force, brute_force_best_subset, exact_greedy, naive_greedy, OracleProblem};
pub use submod::{measure_submod_ratio, ratio_bound, SubmodReport};
pub use taylor::{default_alphas, mean_decay_ratio, taylor_error_scan, taylor_scan_instance, LinearProbe};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{craig_select_perbatch, gradmatch_omp_perbatch, BatchedGradients};
use crate::error::Result;
use crate::model::LossKind;
use crate::retrieve::{greedy_select, SelectorConfig};
use crate::rng::{derive_seed, gaussian_vec, seeded, stream};

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub pass: bool,
}

impl CheckResult {
    fn at_most(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self { name: name.into(), bound, observed, pass: observed <= bound }
    }

    fn at_least(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self { name: name.into(), bound, observed, pass: observed >= bound }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Gradients,
    Taylor,
    Greedy,
    Optimality,
    Submodularity,
    Baselines,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] =
        [Self::Gradients, Self::Taylor, Self::Greedy, Self::Optimality, Self::Submodularity, Self::Baselines];
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyOptions {
    pub only: Option<CheckKind>,
    pub seed: u64,
    /// Test hook: perturbs one analytic gradient coordinate.
    pub corrupt_gradient: bool,
}

/// Instance family for the greedy and optimality checks: `m ∈ [6, 12]`, `k ∈ [1, 4]`.
pub fn selection_instance(seed: u64, idx: usize) -> Result<(Instance, usize)> {
    let mut rng = seeded(derive_seed(seed, stream::SAMPLE, idx as u64));
    let m = rng.random_range(6..=12);
    let k = rng.random_range(1..=4);
    let spec = InstanceSpec { m, ..InstanceSpec::default() };
    Ok((random_instance(spec, derive_seed(seed, stream::INIT, idx as u64))?, k))
}

/// Number of instances where full-sampling `greedy_select` differs from the naive oracle trace.
pub fn greedy_mismatches(count: usize, seed: u64) -> Result<usize> {
    let mut bad = 0;
    for idx in 0..count {
        let (inst, k) = selection_instance(seed, idx)?;
        let cfg = SelectorConfig {
            budget: k,
            epsilon: 1e-3,
            seed: idx as u64,
            alpha: inst.spec.alpha,
            lambda: inst.spec.lambda,
        };
        let got = greedy_select(&inst.params, &inst.labeled, &inst.grads, &cfg)?.coreset.indices;
        let oracle = OracleProblem::new(&inst.params, &inst.labeled, &inst.grads, inst.spec.alpha, inst.spec.lambda)?;
        if got != naive_greedy(&oracle, k) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Approximation factor `1 - e^{-(1-α)}` with `α = 2R²/(2R²+1)`.
pub fn greedy_factor(radius: f64) -> f64 {
    let r2 = radius * radius;
    let a = 2.0 * r2 / (2.0 * r2 + 1.0);
    1.0 - (-(1.0 - a)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub factor: f64,
    /// Smallest `(f(S_greedy) - f(∅)) / (f(S*) - f(∅))` over instances, for exact-value greedy.
    pub exact_greedy_min: f64,
    /// Same ratio for the first-order (library) greedy.
    pub taylor_greedy_min: f64,
    /// Instances whose optimal gain over `f(∅)` was not positive (skipped).
    pub skipped: usize,
}

pub fn near_optimality(count: usize, seed: u64) -> Result<OptimalityReport> {
    let mut exact_min = f64::INFINITY;
    let mut taylor_min = f64::INFINITY;
    let mut skipped = 0;
    let mut radius: f64 = 0.0;
    for idx in 0..count {
        let (inst, k) = selection_instance(seed, idx)?;
        radius = radius.max(inst.spec.radius);
        let p = OracleProblem::new(&inst.params, &inst.labeled, &inst.grads, inst.spec.alpha, inst.spec.lambda)?;
        let f0 = p.value(&[]);
        let (_, opt) = brute_force(&p, k)?;
        let opt_gain = opt - f0;
        if opt_gain <= 0.0 {
            skipped += 1;
            continue;
        }
        exact_min = exact_min.min((p.value(&exact_greedy(&p, k)) - f0) / opt_gain);
        let cfg =
            SelectorConfig { budget: k, epsilon: 1e-3, seed: 0, alpha: inst.spec.alpha, lambda: inst.spec.lambda };
        let taylor = greedy_select(&inst.params, &inst.labeled, &inst.grads, &cfg)?.coreset.indices;
        taylor_min = taylor_min.min((p.value(&taylor) - f0) / opt_gain);
    }
    Ok(OptimalityReport {
        factor: greedy_factor(radius),
        exact_greedy_min: exact_min,
        taylor_greedy_min: taylor_min,
        skipped,
    })
}

/// Random tiny instances for the submodularity-ratio measurement (`m = 8`).
pub fn submod_instances(count: usize, kind: LossKind, seed: u64) -> Result<Vec<Instance>> {
    let spec = InstanceSpec { m: 8, loss: kind, ..InstanceSpec::default() };
    (0..count).map(|i| random_instance(spec, derive_seed(seed, stream::PAIRING, i as u64))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    /// Largest `|Σ γ - #batches|` seen for CRAIG.
    pub craig_weight_error: f64,
    /// Smallest `F(greedy) / F(optimal)` for CRAIG coverage.
    pub craig_coverage_ratio: f64,
    /// Largest single-step increase of the OMP residual (≤ 0 when monotone).
    pub omp_max_increase: f64,
    /// Worst `‖residual‖ / ‖target‖` on orthogonal exact-recovery instances.
    pub omp_recovery: f64,
}

pub fn baseline_properties(count: usize, seed: u64) -> Result<BaselineReport> {
    let mut weight_err: f64 = 0.0;
    let mut cov_ratio = f64::INFINITY;
    let mut max_inc = f64::NEG_INFINITY;
    let mut recovery: f64 = 0.0;
    for idx in 0..count {
        let mut rng = seeded(derive_seed(seed, stream::SAMPLE, idx as u64));
        let nb = rng.random_range(2..=8);
        let dim = rng.random_range(2..=5);
        let sums: Vec<Vec<f64>> = (0..nb).map(|_| gaussian_vec(&mut rng, dim, 1.0)).collect();
        let bg = BatchedGradients::from_sums(sums.clone())?;
        for k in 1..=nb.min(3) {
            let sel = craig_select_perbatch(&bg, k)?;
            weight_err = weight_err.max((sel.weights.iter().sum::<f64>() - nb as f64).abs());
            let best = oracle::best_coverage(&sums, k);
            cov_ratio = cov_ratio.min(oracle::coverage(&sums, &sel.batches) / best);
        }
        let omp = gradmatch_omp_perbatch(&bg, nb, 0.0)?;
        for w in omp.residual_norms.windows(2) {
            max_inc = max_inc.max(w[1] - w[0]);
        }
        // orthogonal instance: scaled, rotated coordinate vectors
        let n = rng.random_range(2..=6);
        let q = random_orthonormal(&mut rng, n);
        let orth: Vec<Vec<f64>> = q
            .iter()
            .map(|v| {
                let s = rng.random_range(0.5..2.0);
                v.iter().map(|x| x * s).collect()
            })
            .collect();
        let target_norm = crate::vecops::norm(&crate::vecops::sum_rows(n, orth.iter().map(Vec::as_slice)));
        let r = gradmatch_omp_perbatch(&BatchedGradients::from_sums(orth)?, n, 0.0)?;
        recovery = recovery.max(r.residual_norms.last().copied().unwrap_or(0.0) / target_norm);
    }
    Ok(BaselineReport {
        craig_weight_error: weight_err,
        craig_coverage_ratio: cov_ratio,
        omp_max_increase: max_inc,
        omp_recovery: recovery,
    })
}

/// Gram–Schmidt on Gaussian vectors.
fn random_orthonormal<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian_vec(rng, n, 1.0);
        for b in &basis {
            let p = crate::vecops::dot(&v, b);
            crate::vecops::axpy(-p, b, &mut v);
        }
        let nv = crate::vecops::norm(&v);
        if nv > 1e-6 {
            basis.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    basis
}

/// Runs the selected checks and returns one report line per check.
pub fn run_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let wanted = |k: CheckKind| opts.only.is_none_or(|o| o == k);
    let seed = opts.seed;
    let mut out = Vec::new();
    if wanted(CheckKind::Gradients) {
        for c in check_gradients(50, seed, opts.corrupt_gradient)? {
            out.push(CheckResult::at_most(format!("gradients.{}", c.name), c.max_rel_error, 1e-5));
        }
    }
    if wanted(CheckKind::Taylor) {
        let mut ratios = Vec::new();
        for i in 0..20 {
            let spec = InstanceSpec { n: 8, m: 10, classes: 3, ..InstanceSpec::default() };
            let inst = random_instance(spec, derive_seed(seed, stream::SHUFFLE, i))?;
            ratios.push(mean_decay_ratio(&taylor_scan_instance(&inst, &default_alphas())?));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        out.push(CheckResult::at_most("taylor.mean_decay_ratio", mean, 0.3));
        let inst = random_instance(InstanceSpec::default(), seed)?;
        let probe = LinearProbe((0..inst.grads.width()).map(|i| 1.0 - 0.1 * i as f64).collect());
        let errs =
            taylor_error_scan(&probe, &inst.params.last_layer_flat(), &inst.grads, &[0, 1], 1.0, &default_alphas())?;
        out.push(CheckResult::at_most("taylor.linear_probe_error", errs.iter().copied().fold(0.0, f64::max), 1e-12));
    }
    if wanted(CheckKind::Greedy) {
        out.push(CheckResult::at_most("greedy.oracle_mismatches", greedy_mismatches(50, seed)? as f64, 0.0));
    }
    if wanted(CheckKind::Optimality) {
        let r = near_optimality(50, seed)?;
        out.push(CheckResult::at_least("optimality.exact_greedy_ratio", r.exact_greedy_min, r.factor));
        out.push(CheckResult::at_least("optimality.first_order_greedy_ratio", r.taylor_greedy_min, r.factor));
    }
    if wanted(CheckKind::Submodularity) {
        for (name, kind) in [("cross_entropy", LossKind::CrossEntropy), ("squared", LossKind::Squared)] {
            let rep = measure_submod_ratio(&submod_instances(100, kind, seed)?, kind)?;
            out.push(CheckResult::at_least(format!("submodularity.{name}"), rep.min_ratio, rep.bound));
        }
    }
    if wanted(CheckKind::Baselines) {
        let r = baseline_properties(60, seed)?;
        out.push(CheckResult::at_most("baselines.craig_weight_sum_error", r.craig_weight_error, 0.0));
        out.push(CheckResult::at_least(
            "baselines.craig_coverage_ratio",
            r.craig_coverage_ratio,
            1.0 - (-1.0f64).exp(),
        ));
        out.push(CheckResult::at_most("baselines.omp_residual_increase", r.omp_max_increase, 0.0));
        out.push(CheckResult::at_most("baselines.omp_orthogonal_recovery", r.omp_recovery, 1e-8));
    }
    Ok(out)
}
