//! Aggregation of `result.json` files into one row per (scenario, selector, budget).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coreset_ssl::run::Scenario;

use crate::cli::ReportArgs;
use crate::commands::RunRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub scenario: Scenario,
    pub selector: String,
    pub budget: f64,
    pub runs: usize,
    pub accuracy_mean: f64,
    /// Sample standard deviation (`n - 1`); 0 for a single run.
    pub accuracy_std: f64,
    /// Unlabeled gradient evaluations, selection included, over those of full-set training.
    pub grad_eval_ratio: f64,
    /// Same, training updates only.
    pub train_grad_eval_ratio: f64,
}

fn find_results(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_results(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "result.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Expands directories, failing with every missing path listed.
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let missing: Vec<String> = inputs.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        bail!("missing input(s): {}", missing.join(", "));
    }
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let before = files.len();
            find_results(p, &mut files)?;
            if files.len() == before {
                bail!("no result.json under {}", p.display());
            }
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(records: &[RunRecord]) -> Vec<Row> {
    let mut groups: BTreeMap<(Scenario, usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let sel = r.result.selector;
        let order = [
            coreset_ssl::trainer::SelectorKind::Full,
            coreset_ssl::trainer::SelectorKind::Retrieve,
            coreset_ssl::trainer::SelectorKind::Random,
            coreset_ssl::trainer::SelectorKind::Craig,
            coreset_ssl::trainer::SelectorKind::Gradmatch,
        ]
        .iter()
        .position(|&s| s == sel)
        .unwrap_or(usize::MAX);
        groups.entry((r.scenario, order, format!("{}", r.result.budget))).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let accs: Vec<f64> = g.iter().map(|r| r.result.final_accuracy).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&accs);
            let full = |r: &RunRecord| (r.result.epochs * r.result.unlabeled_size) as f64;
            let ratio =
                |f: &dyn Fn(&RunRecord) -> u64| g.iter().map(|r| f(r) as f64 / full(r)).sum::<f64>() / g.len() as f64;
            Row {
                scenario: g[0].scenario,
                selector: g[0].result.selector.as_str().to_string(),
                budget: g[0].result.budget,
                runs: g.len(),
                accuracy_mean,
                accuracy_std,
                grad_eval_ratio: ratio(&|r| r.result.train_grad_evals + r.result.selection_grad_evals),
                train_grad_eval_ratio: ratio(&|r| r.result.train_grad_evals),
            }
        })
        .collect()
}

const HEADER: [&str; 8] = [
    "scenario",
    "selector",
    "budget",
    "runs",
    "accuracy_mean",
    "accuracy_std",
    "grad_eval_ratio",
    "train_grad_eval_ratio",
];

pub fn markdown(rows: &[Row]) -> String {
    let mut s = format!("| {} |\n|{}\n", HEADER.join(" | "), "---|".repeat(HEADER.len()));
    for r in rows {
        s += &format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.scenario.as_str(),
            r.selector,
            r.budget,
            r.runs,
            r.accuracy_mean,
            r.accuracy_std,
            r.grad_eval_ratio,
            r.train_grad_eval_ratio
        );
    }
    s
}

fn write_csv(rows: &[Row], path: &Path) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "{}", HEADER.join(","))?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.scenario.as_str(),
            r.selector,
            r.budget,
            r.runs,
            r.accuracy_mean,
            r.accuracy_std,
            r.grad_eval_ratio,
            r.train_grad_eval_ratio
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn run(a: &ReportArgs) -> Result<()> {
    let files = collect_inputs(&a.inputs)?;
    let records = files
        .iter()
        .map(|p| -> Result<RunRecord> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&records);
    print!("{}", markdown(&rows));
    if let Some(out) = &a.out {
        write_csv(&rows, out)?;
    }
    Ok(())
}
