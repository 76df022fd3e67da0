//! The training loop: optional warm start on the full unlabeled set, then
//! coreset epochs with reselection every `R` epochs.
//!
//! Epoch `t` with coreset `S` visits every member of `S` exactly once, in
//! mini-batches of `unlabeled_batch` (the last one may be short). Each
//! unlabeled batch is paired with a labeled batch; labeled batches wrap around
//! the shuffled labeled set. The step direction is
//! `∇L_S(batch_l) + λ_t / |batch_u| · Σ_j γ_j m_j ∇l_u(x_j)` over all
//! parameters. Unlabeled gradient evaluations are counted per epoch; the
//! evaluations spent building gradient tables for selection are counted
//! separately.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    coreset_from_batches, craig_select_perbatch, gradmatch_omp_perbatch, random_select, BatchedGradients,
};
use crate::data::{Dataset, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{
    ce_loss, full_gradient, sgd_step, Architecture, Checkpoint, LossKind, LrSchedule, ModelParams, OptimizerState,
    Targets,
};
use crate::retrieve::{gradient_table, select_retrieve, Coreset, SelectorConfig, TraceEntry};
use crate::rng::{derive_seed, seeded, stream};
use crate::ssl::{ema_update, point_seed, unlabeled_term, EmaTeacher, SslAlgorithm, SslLossConfig};
use crate::vecops::axpy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Retrieve,
    Random,
    Craig,
    Gradmatch,
    Full,
}

impl SelectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Retrieve => "retrieve",
            Self::Random => "random",
            Self::Craig => "craig",
            Self::Gradmatch => "gradmatch",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub schedule: ScheduleKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 0.03, momentum: 0.9, schedule: ScheduleKind::Cosine }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub hidden: usize,
    /// Total epochs `T`, warm epochs included.
    pub epochs: usize,
    /// Reselection interval `R`.
    pub select_every: usize,
    /// Coreset size as a fraction of `m`.
    pub budget: f64,
    /// `κ` in `T_w = round(κ T k / m)`.
    pub warm_fraction: f64,
    /// Off for robust-SSL runs: the first coreset is drawn at epoch 0.
    pub warm_start: bool,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub lambda: f64,
    /// Linear ramp of `λ` over the first 10% of epochs.
    pub lambda_ramp: bool,
    pub optimizer: OptimizerConfig,
    pub loss: SslLossConfig,
    pub selector: SelectorKind,
    /// Stochastic-greedy `ε`.
    pub epsilon: f64,
    /// Residual threshold for the per-batch OMP selector.
    pub omp_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp1,
            hidden: 16,
            epochs: 100,
            select_every: 20,
            budget: 0.3,
            warm_fraction: 0.5,
            warm_start: true,
            labeled_batch: 10,
            unlabeled_batch: 50,
            lambda: 1.0,
            lambda_ramp: false,
            optimizer: OptimizerConfig::default(),
            loss: SslLossConfig::default(),
            selector: SelectorKind::Retrieve,
            epsilon: 0.01,
            omp_tol: 1e-10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.select_every == 0 {
            return Err(Error::invalid("epochs and select_every must be positive"));
        }
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::invalid("budget must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.warm_fraction) {
            return Err(Error::invalid("warm_fraction must lie in [0, 1]"));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon must lie in (0, 1)"));
        }
        if !(self.lambda.is_finite() && self.optimizer.lr.is_finite() && self.optimizer.lr >= 0.0) {
            return Err(Error::invalid("lambda and lr must be finite, lr nonnegative"));
        }
        if self.architecture == Architecture::Mlp1 && self.hidden == 0 {
            return Err(Error::invalid("mlp1 needs a positive hidden width"));
        }
        self.loss.validate()
    }

    /// Coreset size `k = round(budget · m)`, at least 1.
    pub fn coreset_size(&self, m: usize) -> usize {
        ((self.budget * m as f64).round() as usize).clamp(1, m)
    }

    fn lambda_at(&self, epoch: usize) -> f64 {
        if !self.lambda_ramp {
            return self.lambda;
        }
        let ramp = (self.epochs as f64 * 0.1).ceil().max(1.0);
        self.lambda * ((epoch + 1) as f64 / ramp).min(1.0)
    }
}

/// `T_w = round(κ T k / m)`.
pub fn warm_start_epochs(kappa: f64, epochs: usize, k: usize, m: usize) -> usize {
    (kappa * epochs as f64 * k as f64 / m as f64).round() as usize
}

/// One selection event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub epoch: usize,
    pub selector: SelectorKind,
    pub size: usize,
    /// Evaluation only: share of selected points flagged OOD.
    pub ood_fraction: Option<f64>,
    pub trace: Vec<TraceEntry>,
}

/// Wall-clock seconds per phase. Kept out of [`TrainResult`] so results stay
/// byte-reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub warm_secs: f64,
    pub select_secs: f64,
    pub train_secs: f64,
    pub eval_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub selector: SelectorKind,
    pub budget: f64,
    pub seed: u64,
    pub epochs: usize,
    pub warm_epochs: usize,
    pub unlabeled_size: usize,
    pub coreset_size: usize,
    pub accuracy: Vec<f64>,
    pub labeled_loss: Vec<f64>,
    /// Unlabeled gradient evaluations spent on training updates, per epoch.
    pub grad_evals: Vec<u64>,
    /// Evaluation only: OOD share of the unlabeled points in use, per epoch.
    pub ood_fraction: Vec<Option<f64>>,
    pub train_grad_evals: u64,
    pub selection_grad_evals: u64,
    pub selections: Vec<SelectionRecord>,
    pub final_accuracy: f64,
    pub final_params: Checkpoint,
    #[serde(skip)]
    pub timing: Timing,
}

/// Argmax accuracy; ties go to the lowest class id.
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<f64> {
    let logits = params.forward(&test.features)?;
    let hits = logits.iter_rows().zip(&test.labels).filter(|(z, &y)| crate::vecops::argmax(z) == y).count();
    Ok(hits as f64 / test.len() as f64)
}

/// Share of coreset members flagged OOD. Evaluation only.
pub fn coreset_ood_fraction(s: &Coreset, u: &UnlabeledSet) -> Result<f64> {
    let flags = u.ood_flags().ok_or_else(|| Error::invalid("unlabeled set carries no OOD flags"))?;
    if s.is_empty() {
        return Err(Error::invalid("empty coreset"));
    }
    let hits = s.indices.iter().filter(|&&j| flags[j]).count();
    Ok(hits as f64 / s.len() as f64)
}

struct Selected {
    coreset: Coreset,
    trace: Vec<TraceEntry>,
    grad_evals: u64,
}

#[allow(clippy::too_many_arguments)]
fn select(
    cfg: &TrainConfig,
    kind: SelectorKind,
    params: &ModelParams,
    teacher: Option<&ModelParams>,
    d: &Dataset,
    u: &UnlabeledSet,
    alpha: f64,
    lambda: f64,
    seed: u64,
) -> Result<Selected> {
    let m = u.len();
    let k = cfg.coreset_size(m);
    let table_seed = derive_seed(seed, stream::SELECT, 0);
    let per_batch = |grad_evals| -> Result<(BatchedGradients, usize, u64)> {
        let (grads, _) = gradient_table(params, teacher, u, &cfg.loss, table_seed)?;
        let bg = BatchedGradients::new(&grads, cfg.unlabeled_batch)?;
        let kb = (k / cfg.unlabeled_batch).clamp(1, bg.len());
        Ok((bg, kb, grad_evals))
    };
    Ok(match kind {
        SelectorKind::Full => Selected { coreset: Coreset::unweighted((0..m).collect()), trace: vec![], grad_evals: 0 },
        SelectorKind::Random => Selected { coreset: random_select(m, k, seed)?, trace: vec![], grad_evals: 0 },
        SelectorKind::Retrieve => {
            let sc = SelectorConfig { budget: k, epsilon: cfg.epsilon, seed, alpha, lambda };
            let sel = select_retrieve(params, teacher, d, u, &cfg.loss, &sc)?;
            Selected { coreset: sel.coreset, trace: sel.trace, grad_evals: m as u64 }
        }
        SelectorKind::Craig => {
            let (bg, kb, ge) = per_batch(m as u64)?;
            let sel = craig_select_perbatch(&bg, kb)?;
            Selected { coreset: coreset_from_batches(&sel, &bg)?, trace: sel.trace, grad_evals: ge }
        }
        SelectorKind::Gradmatch => {
            let (bg, kb, ge) = per_batch(m as u64)?;
            let sel = gradmatch_omp_perbatch(&bg, kb, cfg.omp_tol)?.selection;
            if sel.degenerate {
                log::warn!("gradmatch saw all-zero gradients");
            }
            Selected { coreset: coreset_from_batches(&sel, &bg)?, trace: sel.trace, grad_evals: ge }
        }
    })
}

/// A single selection outside the training loop, at step size `cfg.optimizer.lr`
/// and weight `cfg.lambda`. The mean-teacher target is the model itself.
/// Returns the coreset and the selector trace.
pub fn select_once(
    cfg: &TrainConfig,
    params: &ModelParams,
    d: &Dataset,
    u: &UnlabeledSet,
) -> Result<(Coreset, Vec<TraceEntry>)> {
    cfg.validate()?;
    let teacher = (cfg.loss.algorithm == SslAlgorithm::MeanTeacher).then_some(params);
    let seed = derive_seed(cfg.seed, stream::SELECT, 0);
    let sel = select(cfg, cfg.selector, params, teacher, d, u, cfg.optimizer.lr, cfg.lambda, seed)?;
    Ok((sel.coreset, sel.trace))
}

/// Number of SGD steps an epoch over `size` unlabeled points takes.
fn steps_for(size: usize, batch: usize) -> u64 {
    size.div_ceil(batch) as u64
}

fn planned_coreset_size(cfg: &TrainConfig, m: usize) -> usize {
    let k = cfg.coreset_size(m);
    match cfg.selector {
        SelectorKind::Full => m,
        SelectorKind::Retrieve | SelectorKind::Random => k,
        SelectorKind::Craig | SelectorKind::Gradmatch => {
            (k / cfg.unlabeled_batch).clamp(1, (m / cfg.unlabeled_batch).max(1)) * cfg.unlabeled_batch
        }
    }
}

/// One pass over `active` (indices into `u` with their weights).
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    cfg: &TrainConfig,
    epoch: usize,
    params: &mut ModelParams,
    teacher: &mut Option<EmaTeacher>,
    opt: &mut OptimizerState,
    d: &Dataset,
    u: &UnlabeledSet,
    active: &Coreset,
) -> Result<u64> {
    let lambda = cfg.lambda_at(epoch);
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.shuffle(&mut seeded(derive_seed(cfg.seed, stream::SHUFFLE, epoch as u64)));
    let mut labeled: Vec<usize> = (0..d.len()).collect();
    labeled.shuffle(&mut seeded(derive_seed(cfg.seed, stream::PAIRING, epoch as u64)));
    let c = params.classes();
    let mut evals = 0u64;
    let mut cursor = 0usize;
    for chunk in order.chunks(cfg.unlabeled_batch) {
        let lab: Vec<usize> = (0..cfg.labeled_batch.min(d.len())).map(|i| labeled[(cursor + i) % d.len()]).collect();
        cursor = (cursor + lab.len()) % d.len();
        let batch = d.features.select_rows(&lab);
        let mut targets = crate::data::Matrix::zeros(lab.len(), c);
        for (r, &i) in lab.iter().enumerate() {
            targets.row_mut(r)[d.labels[i]] = 1.0;
        }
        let (_, mut grad) = full_gradient(params, &batch, &targets, LossKind::CrossEntropy)?;
        let step_seed = derive_seed(cfg.seed, stream::MASK, opt.step);
        let snapshot = &*params;
        let teacher_params = teacher.as_ref().map(|t| &t.params);
        let per_point = crate::par::map_slice(chunk, |&pos| {
            let j = active.indices[pos];
            let term = unlabeled_term(snapshot, teacher_params, u.point(j), &cfg.loss, point_seed(step_seed, j));
            term.map(|t| (active.weight(pos), t.full(snapshot).1))
        });
        evals += chunk.len() as u64;
        if lambda != 0.0 {
            let scale = lambda / chunk.len() as f64;
            for r in per_point {
                let (w, g) = r?;
                axpy(scale * w, &g, &mut grad);
            }
        }
        sgd_step(params, &grad, opt)?;
        if let Some(t) = teacher.as_mut() {
            ema_update(t, params)?;
        }
    }
    Ok(evals)
}

/// Runs the full schedule and records per-epoch metrics.
pub fn train(cfg: &TrainConfig, d: &Dataset, u: &UnlabeledSet, test: &Dataset) -> Result<TrainResult> {
    cfg.validate()?;
    if d.dim() != u.dim() || d.dim() != test.dim() {
        return Err(Error::invalid("labeled, unlabeled and test sets differ in width"));
    }
    let m = u.len();
    let k = cfg.coreset_size(m);
    let classes = d.class_count.max(test.class_count);
    let mut params =
        ModelParams::init(cfg.architecture, d.dim(), cfg.hidden, classes, derive_seed(cfg.seed, stream::INIT, 0))?;
    let mut teacher =
        (cfg.loss.algorithm == SslAlgorithm::MeanTeacher).then(|| EmaTeacher::new(&params, cfg.loss.ema_decay));
    let warm = if cfg.warm_start && cfg.selector != SelectorKind::Full {
        warm_start_epochs(cfg.warm_fraction, cfg.epochs, k, m).min(cfg.epochs)
    } else {
        0
    };
    let core_size = planned_coreset_size(cfg, m);
    let total_steps = warm as u64 * steps_for(m, cfg.unlabeled_batch)
        + (cfg.epochs - warm) as u64 * steps_for(core_size, cfg.unlabeled_batch);
    let schedule = match cfg.optimizer.schedule {
        ScheduleKind::Constant => LrSchedule::Constant,
        ScheduleKind::Cosine => LrSchedule::Cosine { total_steps },
    };
    let mut opt = OptimizerState::new(&params, cfg.optimizer.lr, cfg.optimizer.momentum, schedule);
    let full_set = Coreset::unweighted((0..m).collect());
    let mut timing = Timing::default();
    let mut coreset: Option<Coreset> = None;
    let mut result = TrainResult {
        selector: cfg.selector,
        budget: cfg.budget,
        seed: cfg.seed,
        epochs: cfg.epochs,
        warm_epochs: warm,
        unlabeled_size: m,
        coreset_size: core_size,
        accuracy: Vec::with_capacity(cfg.epochs),
        labeled_loss: Vec::with_capacity(cfg.epochs),
        grad_evals: Vec::with_capacity(cfg.epochs),
        ood_fraction: Vec::with_capacity(cfg.epochs),
        train_grad_evals: 0,
        selection_grad_evals: 0,
        selections: Vec::new(),
        final_accuracy: 0.0,
        final_params: params.to_checkpoint(),
        timing: Timing::default(),
    };
    for epoch in 0..cfg.epochs {
        let in_warm = epoch < warm;
        if !in_warm {
            let first = coreset.is_none();
            let due = epoch % cfg.select_every == 0 && epoch > 0;
            if first || due {
                let kind = if first && epoch == 0 && cfg.selector != SelectorKind::Full {
                    SelectorKind::Random
                } else {
                    cfg.selector
                };
                let started = Instant::now();
                let sel = select(
                    cfg,
                    kind,
                    &params,
                    teacher.as_ref().map(|t| &t.params),
                    d,
                    u,
                    opt.lr(),
                    cfg.lambda_at(epoch),
                    derive_seed(cfg.seed, stream::SELECT, epoch as u64),
                )
                .map_err(|e| e.context(format!("selection at epoch {epoch}")))?;
                timing.select_secs += started.elapsed().as_secs_f64();
                result.selection_grad_evals += sel.grad_evals;
                let ood = u.ood_flags().map(|_| coreset_ood_fraction(&sel.coreset, u)).transpose()?;
                result.selections.push(SelectionRecord {
                    epoch,
                    selector: kind,
                    size: sel.coreset.len(),
                    ood_fraction: ood,
                    trace: sel.trace,
                });
                log::debug!("epoch {epoch}: selected {} points with {}", sel.coreset.len(), kind.as_str());
                coreset = Some(sel.coreset);
            }
        }
        let active = if in_warm { &full_set } else { coreset.as_ref().expect("selected above") };
        let started = Instant::now();
        let evals = run_epoch(cfg, epoch, &mut params, &mut teacher, &mut opt, d, u, active)
            .map_err(|e| e.context(format!("training epoch {epoch}")))?;
        let secs = started.elapsed().as_secs_f64();
        if in_warm {
            timing.warm_secs += secs;
        } else {
            timing.train_secs += secs;
        }
        if !params.is_finite() {
            return Err(Error::invalid(format!("parameters diverged at epoch {epoch}")));
        }
        let started = Instant::now();
        let acc = evaluate(&params, test)?;
        let loss = ce_loss(&params.forward(&d.features)?, Targets::Classes(&d.labels))?;
        timing.eval_secs += started.elapsed().as_secs_f64();
        result.accuracy.push(acc);
        result.labeled_loss.push(loss);
        result.grad_evals.push(evals);
        result.train_grad_evals += evals;
        result.ood_fraction.push(u.ood_flags().map(|_| coreset_ood_fraction(active, u)).transpose()?);
        log::info!("epoch {epoch}: accuracy {acc:.4}, labeled loss {loss:.4}, unlabeled evals {evals}");
    }
    result.final_accuracy = *result.accuracy.last().expect("epochs >= 1");
    result.final_params = params.to_checkpoint();
    result.timing = timing;
    Ok(result)
}

/// Per-epoch metrics as CSV: `epoch,accuracy,labeled_loss,grad_evals,ood_fraction`.
pub fn write_metrics_csv(result: &TrainResult, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = crate::data::csv_writer(std::io::BufWriter::new(file));
    let err = crate::data::csv_err;
    w.write_record(["epoch", "accuracy", "labeled_loss", "grad_evals", "ood_fraction"]).map_err(err)?;
    for t in 0..result.accuracy.len() {
        let ood = result.ood_fraction[t].map_or(String::new(), |v| format!("{v}"));
        w.write_record([
            t.to_string(),
            format!("{}", result.accuracy[t]),
            format!("{}", result.labeled_loss[t]),
            result.grad_evals[t].to_string(),
            ood,
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
