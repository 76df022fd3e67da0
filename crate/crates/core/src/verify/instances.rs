//! Random tiny selection instances with bounded feature norms.

use rand::Rng;

use crate::data::{Dataset, Matrix};
use crate::error::Result;
use crate::model::{last_layer_gradient, softmax, Architecture, LossKind, ModelParams};
use crate::retrieve::GradientTable;
use crate::rng::{gaussian_vec, seeded};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub dim: usize,
    pub radius: f64,
    pub loss: LossKind,
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self { n: 8, m: 10, classes: 3, dim: 2, radius: 1.0, loss: LossKind::CrossEntropy, alpha: 0.5, lambda: 1.0 }
    }
}

/// A linear model, a labeled set and per-element unlabeled gradients.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: ModelParams,
    pub labeled: Dataset,
    pub unlabeled: Matrix,
    pub grads: GradientTable,
    pub spec: InstanceSpec,
}

fn point_in_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v = gaussian_vec(rng, dim, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = radius * rng.random_range(0.2..1.0f64);
    v.iter_mut().for_each(|x| *x *= r / n);
    v
}

/// Points lie in the ball of radius `spec.radius`. Labels and unlabeled
/// targets come from a hidden reference model, so the unlabeled gradients
/// point (on average) towards a lower labeled loss; the model being scored
/// is a separate, weaker random draw.
pub fn random_instance(spec: InstanceSpec, seed: u64) -> Result<Instance> {
    let mut rng = seeded(seed);
    let mut truth = ModelParams::zeros(Architecture::Linear, spec.dim, 0, spec.classes)?;
    let tw: Vec<f64> = gaussian_vec(&mut rng, spec.classes * spec.dim, 3.0);
    truth.output.weights = tw;
    let mut params = ModelParams::zeros(Architecture::Linear, spec.dim, 0, spec.classes)?;
    let flat: Vec<f64> = gaussian_vec(&mut rng, params.num_params(), 0.5);
    params.set_flat(&flat)?;

    let xs: Vec<Vec<f64>> = (0..spec.n).map(|_| point_in_ball(&mut rng, spec.dim, spec.radius)).collect();
    let labels: Vec<usize> = (0..spec.n).map(|i| if i < spec.classes { i } else { truth.predict(&xs[i]) }).collect();
    let labeled = Dataset::new(Matrix::from_rows(&xs)?, labels, spec.classes)?;

    let us: Vec<Vec<f64>> = (0..spec.m).map(|_| point_in_ball(&mut rng, spec.dim, spec.radius)).collect();
    let mut rows = Vec::with_capacity(spec.m);
    for x in &us {
        let q = softmax(&truth.logits(x));
        rows.push(last_layer_gradient(&params, x, &q, spec.loss)?.0);
    }
    let grads = GradientTable::new(Matrix::from_rows(&rows)?)?;
    Ok(Instance { params, labeled, unlabeled: Matrix::from_rows(&us)?, grads, spec })
}
