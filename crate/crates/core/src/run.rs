//! JSON run configuration: a [`TrainConfig`], a dataset recipe and a scenario tag.
//!
//! ```json
//! {
//!   "scenario": "ood",
//!   "dataset": {
//!     "source": { "kind": "blobs", "n": 1400, "centers": [[-2, 0], [2, 0]], "stddev": 0.8 },
//!     "labels_per_class": 5,
//!     "test_size": 400,
//!     "ood": { "ratio": 0.5, "centers": [[0, 12]], "stddev": 0.5 }
//!   },
//!   "train": { "selector": "retrieve", "warm_start": false }
//! }
//! ```
//!
//! Unknown keys are rejected at every level. Relative CSV paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_blobs, generate_two_moons, inject_imbalance, inject_ood, load_csv, load_unlabeled_csv, split_ssl, Dataset,
    UnlabeledSet,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Traditional,
    Ood,
    Imbalance,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Traditional => "traditional",
            Self::Ood => "ood",
            Self::Imbalance => "imbalance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    TwoMoons {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Blobs {
        n: usize,
        centers: Vec<Vec<f64>>,
        stddev: f64,
    },
    /// Pre-split files in the layout written by `generate`.
    Csv {
        labeled: PathBuf,
        unlabeled: PathBuf,
        test: PathBuf,
    },
}

fn default_noise() -> f64 {
    0.1
}

/// Far-away blobs whose points replace a share of the unlabeled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub ratio: f64,
    pub centers: Vec<Vec<f64>>,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceSpec {
    pub minority: Vec<usize>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default = "default_labels_per_class")]
    pub labels_per_class: usize,
    #[serde(default)]
    pub test_size: usize,
    /// Data seed; the run seed is used when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ood: Option<OodSpec>,
    #[serde(default)]
    pub imbalance: Option<ImbalanceSpec>,
}

fn default_labels_per_class() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Scenario,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// The three splits a run trains and evaluates on.
#[derive(Debug, Clone)]
pub struct SslData {
    pub labeled: Dataset,
    pub unlabeled: UnlabeledSet,
    pub test: Dataset,
}

impl RunConfig {
    /// Parses and validates; nothing is read from disk besides `text`.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates `path`, resolving relative CSV paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))?;
        if let DataSource::Csv { labeled, unlabeled, test } = &mut cfg.dataset.source {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [labeled, unlabeled, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let ds = &self.dataset;
        match (self.scenario, ds.ood.is_some(), ds.imbalance.is_some()) {
            (Scenario::Traditional, false, false)
            | (Scenario::Ood, true, false)
            | (Scenario::Imbalance, false, true) => {}
            (s, _, _) => {
                return Err(Error::invalid(format!(
                    "scenario `{}` needs exactly {} in the dataset spec",
                    s.as_str(),
                    match s {
                        Scenario::Traditional => "no ood or imbalance block",
                        Scenario::Ood => "an ood block",
                        Scenario::Imbalance => "an imbalance block",
                    }
                )))
            }
        }
        if let Some(o) = &ds.ood {
            if !(0.0..1.0).contains(&o.ratio) || o.centers.is_empty() || !(o.stddev >= 0.0) {
                return Err(Error::invalid("ood needs ratio in [0, 1), at least one center, stddev >= 0"));
            }
        }
        match &ds.source {
            DataSource::Csv { .. } => {
                if ds.ood.is_some() || ds.imbalance.is_some() {
                    return Err(Error::invalid("csv sources are used as stored; drop the ood/imbalance block"));
                }
            }
            DataSource::TwoMoons { n, .. } | DataSource::Blobs { n, .. } => {
                if ds.labels_per_class == 0 || ds.test_size == 0 || ds.test_size >= *n {
                    return Err(Error::invalid("need labels_per_class > 0 and 0 < test_size < n"));
                }
            }
        }
        Ok(())
    }

    /// The run with `seed` as its training seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c
    }

    pub fn build_data(&self) -> Result<SslData> {
        build_data(&self.dataset, self.train.seed)
    }
}

/// Generates (or loads) the splits. Generated data uses `spec.seed`, falling back to `run_seed`.
pub fn build_data(spec: &DatasetSpec, run_seed: u64) -> Result<SslData> {
    let seed = spec.seed.unwrap_or(run_seed);
    let s = |i| derive_seed(seed, stream::DATA, i);
    let full = match &spec.source {
        DataSource::Csv { labeled, unlabeled, test } => {
            let ctx = |p: &Path, e: Error| e.context(p.display().to_string());
            return Ok(SslData {
                labeled: load_csv(labeled).map_err(|e| ctx(labeled, e))?,
                unlabeled: load_unlabeled_csv(unlabeled).map_err(|e| ctx(unlabeled, e))?,
                test: load_csv(test).map_err(|e| ctx(test, e))?,
            });
        }
        DataSource::TwoMoons { n, noise } => generate_two_moons(*n, *noise, s(0))?,
        DataSource::Blobs { n, centers, stddev } => generate_blobs(*n, centers, *stddev, s(0))?,
    };
    let full = match &spec.imbalance {
        Some(im) => inject_imbalance(&full, &im.minority, im.ratio, s(1))?,
        None => full,
    };
    if spec.test_size >= full.len() {
        return Err(Error::invalid("test_size leaves no training points"));
    }
    let split = split_ssl(&full, spec.labels_per_class, spec.test_size as f64 / full.len() as f64, s(2))?;
    let unlabeled = match &spec.ood {
        Some(o) => {
            let need = ((o.ratio * split.unlabeled.len() as f64).round() as usize).max(o.centers.len());
            let pool = if o.centers.len() >= 2 {
                generate_blobs(need, &o.centers, o.stddev, s(3))?
            } else {
                // one far cluster: generate two copies of it and keep the labels meaningless
                let c = &o.centers[0];
                generate_blobs(need, &[c.clone(), c.clone()], o.stddev, s(3))?
            };
            inject_ood(&split.unlabeled, o.ratio, &pool, s(4))?
        }
        None => split.unlabeled,
    };
    Ok(SslData { labeled: split.labeled, unlabeled, test: split.test })
}
