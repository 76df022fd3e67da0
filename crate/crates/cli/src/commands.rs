use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coreset_ssl::data::{save_csv, save_unlabeled_csv};
use coreset_ssl::model::{Checkpoint, ModelParams};
use coreset_ssl::run::{DataSource, RunConfig, Scenario};
use coreset_ssl::trainer::{
    select_once, train as train_run, write_metrics_csv, SelectorKind, TrainConfig, TrainResult,
};
use coreset_ssl::verify::{run_suite, VerifyOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::{GenerateArgs, RunArgs, SelectArgs, TrainArgs, VerifyArgs};
use crate::{ChecksFailed, UsageError};

/// What `train` writes to `result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub train: TrainConfig,
    pub result: TrainResult,
}

/// Library errors as anyhow errors; bad configs and arguments become usage errors.
pub fn lib_err(e: coreset_ssl::Error) -> anyhow::Error {
    match e.root() {
        coreset_ssl::Error::InvalidArgument(_) | coreset_ssl::Error::Json(_) => UsageError(e.to_string()).into(),
        _ => anyhow::anyhow!(e.to_string()),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| match e.root() {
        coreset_ssl::Error::Io(_) => anyhow::anyhow!(e.to_string()),
        _ => UsageError(format!("invalid config: {e}")).into(),
    })
}

/// Config with command-line overrides applied and re-validated.
fn effective_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = a.selector {
        cfg.train.selector = s.into();
    }
    if let Some(b) = a.budget {
        cfg.train.budget = b;
    }
    cfg.validate().map_err(|e| UsageError(format!("invalid config: {e}")))?;
    Ok(cfg)
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir =
        flag.clone().or_else(|| cfg.out.clone()).ok_or_else(|| UsageError("no output directory: pass --out".into()))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if matches!(cfg.dataset.source, DataSource::Csv { .. }) {
        return Err(UsageError("generate needs a two_moons or blobs source".into()).into());
    }
    let dir = out_dir(&a.out, &cfg)?;
    let data = cfg.build_data().map_err(lib_err)?;
    save_csv(&data.labeled, dir.join("labeled.csv")).map_err(lib_err)?;
    save_unlabeled_csv(&data.unlabeled, dir.join("unlabeled.csv")).map_err(lib_err)?;
    save_csv(&data.test, dir.join("test.csv")).map_err(lib_err)?;
    println!("labeled {}", data.labeled.len());
    println!("unlabeled {}", data.unlabeled.len());
    if data.unlabeled.ood_flags().is_some() {
        println!("ood {}", data.unlabeled.ood_count());
    }
    println!("test {}", data.test.len());
    Ok(())
}

fn write_selection_trace(path: &Path, result: &TrainResult) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in &result.selections {
        for e in &s.trace {
            let line = serde_json::json!({
                "epoch": s.epoch,
                "selector": s.selector,
                "round": e.round,
                "chosen": e.chosen,
                "gain": e.gain,
                "pool_size": e.pool_size,
            });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn train_one(cfg: &RunConfig, dir: &Path) -> Result<f64> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let data = cfg.build_data().map_err(lib_err)?;
    let result = train_run(&cfg.train, &data.labeled, &data.unlabeled, &data.test).map_err(lib_err)?;
    write_metrics_csv(&result, dir.join("metrics.csv")).map_err(lib_err)?;
    write_selection_trace(&dir.join("selections.jsonl"), &result)?;
    write_json(&dir.join("checkpoint.json"), &result.final_params)?;
    write_json(&dir.join("timing.json"), &result.timing)?;
    let acc = result.final_accuracy;
    write_json(&dir.join("result.json"), &RunRecord { scenario: cfg.scenario, train: cfg.train.clone(), result })?;
    Ok(acc)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    if a.seeds == 0 || a.jobs == 0 {
        return Err(UsageError("--seeds and --jobs must be positive".into()).into());
    }
    let cfg = effective_config(&a.run)?;
    let dir = out_dir(&a.run.out, &cfg)?;
    let first = cfg.train.seed;
    let runs: Vec<(u64, PathBuf)> = (first..first + a.seeds)
        .map(|s| (s, if a.seeds == 1 { dir.clone() } else { dir.join(format!("seed-{s}")) }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let outcomes: Vec<Result<f64>> = pool.install(|| {
        runs.par_iter().map(|(s, d)| train_one(&cfg.with_seed(*s), d).with_context(|| format!("seed {s}"))).collect()
    });
    for ((s, d), r) in runs.iter().zip(outcomes) {
        let acc = r?;
        eprintln!("seed {s}: final accuracy {acc:.4} -> {}", d.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct CoresetFile<'a> {
    selector: SelectorKind,
    budget: f64,
    seed: u64,
    size: usize,
    indices: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<&'a [f64]>,
}

pub fn select(a: &SelectArgs) -> Result<()> {
    let cfg = effective_config(&a.run)?;
    let dir = out_dir(&a.run.out, &cfg)?;
    let text = fs::read_to_string(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{}: not a checkpoint: {e}", a.checkpoint.display())))?;
    let params = ModelParams::from_checkpoint(&ckpt).map_err(lib_err)?;
    let data = cfg.build_data().map_err(lib_err)?;
    let (coreset, trace) = select_once(&cfg.train, &params, &data.labeled, &data.unlabeled).map_err(lib_err)?;
    write_json(
        &dir.join("coreset.json"),
        &CoresetFile {
            selector: cfg.train.selector,
            budget: cfg.train.budget,
            seed: cfg.train.seed,
            size: coreset.len(),
            indices: &coreset.indices,
            weights: coreset.weights.as_deref(),
        },
    )?;
    let mut w = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
    coreset_ssl::retrieve::write_trace(&trace, &mut w).map_err(lib_err)?;
    w.flush()?;
    eprintln!("selected {} of {} points with {}", coreset.len(), data.unlabeled.len(), cfg.train.selector.as_str());
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let opts = VerifyOptions { only: a.only.map(Into::into), seed: a.seed, corrupt_gradient: a.corrupt_gradient };
    let checks = run_suite(&opts).map_err(lib_err)?;
    for c in &checks {
        eprintln!(
            "{} {:45} observed {:.3e}  bound {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.observed,
            c.bound
        );
    }
    let json = serde_json::to_string_pretty(&checks)?;
    println!("{json}");
    if let Some(p) = &a.out {
        write_json(p, &checks)?;
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}
