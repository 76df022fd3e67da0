//! Coreset selection for semi-supervised learning.
//!
//! The crate centres on [`retrieve`], a bi-level coreset selector: the inner
//! training problem is replaced by a single lookahead gradient step, and the
//! resulting set function is maximized greedily using a first-order gain
//! estimate over last-layer gradients. Around it sit the pieces needed to run
//! and check it at desk scale:
//!
//! * [`data`]: synthetic datasets, SSL splits, OOD / imbalance injection, CSV I/O
//! * [`model`]: linear-softmax and one-hidden-layer classifiers with closed-form gradients
//! * [`ssl`]: unlabeled losses (mean teacher, VAT, pseudo-label, entropy) and masks
//! * [`baselines`]: random, per-batch CRAIG and per-batch GradMatch (OMP) selectors
//! * [`trainer`]: the periodic-reselection training loop
//! * [`verify`]: brute-force and numerical oracles used by tests and the `verify` command
//! * [`run`]: JSON run configuration shared by the CLI and integration tests
//!
//! Data-parallel inner loops (per-element gradients, candidate gains, pairwise
//! distances) use rayon when the `parallel` feature is enabled (the default).
//! Every reduction is index-ordered, so results are bitwise identical with or
//! without the feature and for any thread count.

pub mod baselines;
pub mod data;
pub mod error;
pub mod model;
pub mod par;
pub mod retrieve;
pub mod rng;
pub mod run;
pub mod ssl;
pub mod trainer;
pub mod vecops;
pub mod verify;

pub use error::{Error, Result};
