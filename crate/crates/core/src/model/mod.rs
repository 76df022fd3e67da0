//! Small differentiable classifiers.
//!
//! Two architectures: a linear-softmax model and a one-hidden-layer ReLU MLP.
//! Weights of a layer are stored output-major (`n_out x n_in`, row-major), so
//! the flattened last layer is `[W_out (C x h), b_out (C)]` with `h` the
//! last-layer input width (the input dimension for the linear model, the hidden
//! width for the MLP). The full flat parameter vector is
//! `[W_hidden, b_hidden, W_out, b_out]`; the last layer is always its tail.

mod grad;
mod loss;
mod optim;

pub use grad::{
    full_gradient, input_gradient, last_layer_gradient, last_layer_gradient_from_features, point_gradient,
    GradientVector,
};
pub use loss::{ce_loss, log_softmax, loss_and_logit_grad, softmax, LossKind, Targets};
pub use optim::{one_step_lookahead, sgd_step, LrSchedule, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp1,
}

/// Fully connected layer, `y = W x + b` with `W` stored `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out] }
    }

    fn init<R: Rng>(rng: &mut R, n_in: usize, n_out: usize) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let weights = (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self { n_in, n_out, weights, bias: vec![0.0; n_out] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
                w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Model parameters `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub hidden: Option<Dense>,
    pub output: Dense,
}

/// Intermediate values of a forward pass needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Hidden pre-activation (MLP only).
    pub pre: Option<Vec<f64>>,
    /// Last-layer input: the raw input for linear, the post-ReLU hidden vector for the MLP.
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(arch: Architecture, input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        Self::check_dims(arch, input_dim, hidden, classes)?;
        let mut rng = seeded(seed);
        Ok(match arch {
            Architecture::Linear => Self { arch, hidden: None, output: Dense::init(&mut rng, input_dim, classes) },
            Architecture::Mlp1 => {
                let h = Dense::init(&mut rng, input_dim, hidden);
                let o = Dense::init(&mut rng, hidden, classes);
                Self { arch, hidden: Some(h), output: o }
            }
        })
    }

    pub fn zeros(arch: Architecture, input_dim: usize, hidden: usize, classes: usize) -> Result<Self> {
        Self::check_dims(arch, input_dim, hidden, classes)?;
        Ok(match arch {
            Architecture::Linear => Self { arch, hidden: None, output: Dense::zeros(input_dim, classes) },
            Architecture::Mlp1 => {
                Self { arch, hidden: Some(Dense::zeros(input_dim, hidden)), output: Dense::zeros(hidden, classes) }
            }
        })
    }

    fn check_dims(arch: Architecture, input_dim: usize, hidden: usize, classes: usize) -> Result<()> {
        if input_dim == 0 || classes < 2 {
            return Err(Error::invalid("model needs input_dim >= 1 and at least 2 classes"));
        }
        if arch == Architecture::Mlp1 && hidden == 0 {
            return Err(Error::invalid("mlp1 needs a positive hidden width"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.output.n_in, |h| h.n_in)
    }

    pub fn classes(&self) -> usize {
        self.output.n_out
    }

    /// Width of the last layer's input (`d` for linear, hidden width for the MLP).
    pub fn feature_dim(&self) -> usize {
        self.output.n_in
    }

    /// Length of a last-layer gradient vector: `C * (h + 1)`.
    pub fn last_layer_len(&self) -> usize {
        self.output.len()
    }

    pub fn num_params(&self) -> usize {
        self.hidden.as_ref().map_or(0, Dense::len) + self.output.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        if let Some(h) = &self.hidden {
            v.extend_from_slice(&h.weights);
            v.extend_from_slice(&h.bias);
        }
        v.extend_from_slice(&self.output.weights);
        v.extend_from_slice(&self.output.bias);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        if let Some(h) = self.hidden.as_mut() {
            take(&mut h.weights);
            take(&mut h.bias);
        }
        take(&mut self.output.weights);
        take(&mut self.output.bias);
        Ok(())
    }

    pub fn from_flat_like(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn last_layer_flat(&self) -> Vec<f64> {
        let mut v = self.output.weights.clone();
        v.extend_from_slice(&self.output.bias);
        v
    }

    pub fn set_last_layer(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.last_layer_len() {
            return Err(Error::invalid("last-layer vector has the wrong length"));
        }
        let nw = self.output.weights.len();
        self.output.weights.copy_from_slice(&flat[..nw]);
        self.output.bias.copy_from_slice(&flat[nw..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|x| x.is_finite())
    }

    /// Last-layer input for one point.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        match &self.hidden {
            None => x.to_vec(),
            Some(h) => h.apply(x).into_iter().map(|v| v.max(0.0)).collect(),
        }
    }

    pub fn activations(&self, x: &[f64]) -> Activations {
        match &self.hidden {
            None => Activations { pre: None, features: x.to_vec(), logits: self.output.apply(x) },
            Some(h) => {
                let pre = h.apply(x);
                let features: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let logits = self.output.apply(&features);
                Activations { pre: Some(pre), features, logits }
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.output.apply(&self.features(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Predicted class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        crate::vecops::argmax(&self.logits(x))
    }

    /// Logits for every row of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::invalid(format!("input has {} columns, model expects {}", x.cols(), self.input_dim())));
        }
        let rows = crate::par::map_range(x.rows(), |i| self.logits(x.row(i)));
        Matrix::new(x.rows(), self.classes(), rows.concat())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layer = |d: &Dense| CheckpointLayer {
            weights: d.weights.chunks(d.n_in).map(<[f64]>::to_vec).collect(),
            bias: d.bias.clone(),
        };
        let mut layers = Vec::new();
        if let Some(h) = &self.hidden {
            layers.push(layer(h));
        }
        layers.push(layer(&self.output));
        Checkpoint {
            architecture: self.arch,
            input_dim: self.input_dim(),
            hidden_dim: self.hidden.as_ref().map(|h| h.n_out),
            classes: self.classes(),
            layers,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let hidden = c.hidden_dim.unwrap_or(0);
        let mut p = Self::zeros(c.architecture, c.input_dim, hidden, c.classes)?;
        let expected = if p.hidden.is_some() { 2 } else { 1 };
        if c.layers.len() != expected {
            return Err(Error::invalid(format!("checkpoint has {} layers, expected {expected}", c.layers.len())));
        }
        let fill = |dst: &mut Dense, src: &CheckpointLayer| -> Result<()> {
            if src.weights.len() != dst.n_out
                || src.weights.iter().any(|r| r.len() != dst.n_in)
                || src.bias.len() != dst.n_out
            {
                return Err(Error::invalid("checkpoint layer shape mismatch"));
            }
            dst.weights = src.weights.concat();
            dst.bias = src.bias.clone();
            Ok(())
        };
        if let Some(h) = p.hidden.as_mut() {
            fill(h, &c.layers[0])?;
        }
        fill(&mut p.output, c.layers.last().expect("at least one layer"))?;
        if !p.is_finite() {
            return Err(Error::invalid("checkpoint contains non-finite values"));
        }
        Ok(p)
    }
}

/// JSON checkpoint: architecture tag, dimensions, and per-layer row-major
/// weights (`n_out` rows of `n_in` values) plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_dim: Option<usize>,
    pub classes: usize,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}
