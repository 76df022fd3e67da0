use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// `base * 0.5 * (1 + cos(pi * t / total_steps))`, clamped at zero past the end.
    Cosine {
        total_steps: u64,
    },
}

/// SGD-with-momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, base_lr: f64, momentum: f64, schedule: LrSchedule) -> Self {
        Self { velocity: vec![0.0; params.num_params()], step: 0, base_lr, momentum, schedule }
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::Cosine { total_steps } => {
                if total_steps == 0 || t >= total_steps {
                    return 0.0;
                }
                let frac = t as f64 / total_steps as f64;
                self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    /// Learning rate the next [`sgd_step`] will use.
    pub fn lr(&self) -> f64 {
        self.lr_at(self.step)
    }
}

/// `v <- mu v + g; theta <- theta - lr_t v`, then advances the step counter.
pub fn sgd_step(params: &mut ModelParams, grad: &[f64], state: &mut OptimizerState) -> Result<()> {
    if grad.len() != params.num_params() || state.velocity.len() != grad.len() {
        return Err(Error::invalid("gradient / momentum buffer shape does not match parameters"));
    }
    let lr = state.lr();
    for (v, g) in state.velocity.iter_mut().zip(grad) {
        *v = state.momentum * *v + g;
    }
    let mut flat = params.flat();
    crate::vecops::axpy(-lr, &state.velocity, &mut flat);
    params.set_flat(&flat)?;
    state.step += 1;
    Ok(())
}

/// Returns a copy of `params` whose last layer is
/// `last - alpha * labeled_grad - alpha * lambda * summed_unlabeled_grad`.
pub fn one_step_lookahead(
    params: &ModelParams,
    labeled_grad: &[f64],
    summed_unlabeled_grad: &[f64],
    alpha: f64,
    lambda: f64,
) -> Result<ModelParams> {
    let n = params.last_layer_len();
    if labeled_grad.len() != n || summed_unlabeled_grad.len() != n {
        return Err(Error::invalid("lookahead gradients must be last-layer shaped"));
    }
    let mut last = params.last_layer_flat();
    crate::vecops::axpy(-alpha, labeled_grad, &mut last);
    crate::vecops::axpy(-alpha * lambda, summed_unlabeled_grad, &mut last);
    let mut out = params.clone();
    out.set_last_layer(&last)?;
    Ok(out)
}
