use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coreset-ssl"));
    c.env_remove("CORESET_SSL_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"{
  "dataset": { "source": { "kind": "two_moons", "n": 230, "noise": 0.1 }, "labels_per_class": 5, "test_size": 30 },
  "train": {
    "hidden": 8, "epochs": 6, "select_every": 2, "unlabeled_batch": 20,
    "loss": { "algorithm": "vat", "vat_eps": 0.2 }
  }
}"#;

const OOD: &str = r#"{
  "scenario": "ood",
  "dataset": {
    "source": { "kind": "blobs", "n": 230, "centers": [[-2, 0], [2, 0]], "stddev": 0.5 },
    "labels_per_class": 5, "test_size": 30,
    "ood": { "ratio": 0.5, "centers": [[0, 10]], "stddev": 0.3 }
  },
  "train": { "hidden": 8, "epochs": 4, "select_every": 2, "warm_start": false }
}"#;

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn generate_writes_three_csvs_with_matching_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("data");
    let o = run(&["generate", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("labeled 10") && stdout.contains("unlabeled 190") && stdout.contains("test 30"));
    let lab = csv_rows(&out.join("labeled.csv"));
    let test = csv_rows(&out.join("test.csv"));
    let unl = csv_rows(&out.join("unlabeled.csv"));
    assert_eq!(lab[0], vec!["f0", "f1", "label"]);
    assert_eq!(lab[0], test[0]);
    assert_eq!(unl[0], lab[0]);
    assert_eq!((lab.len(), unl.len(), test.len()), (11, 191, 31));
}

#[test]
fn generate_ood_flags_half_the_pool() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", OOD);
    let out = tmp.path().join("data");
    assert!(run(&["generate", "--config", p(&cfg), "--out", p(&out)]).status.success());
    let rows = csv_rows(&out.join("unlabeled.csv"));
    assert_eq!(rows[0].last().unwrap(), "ood");
    let flagged: usize = rows[1..].iter().map(|r| r.last().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(flagged, (rows.len() - 1) / 2);
}

#[test]
fn invalid_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let broken = config(tmp.path(), "broken.json", "{ \"dataset\": ");
    let o = run(&["generate", "--config", p(&broken), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid config"));
    let unknown = config(tmp.path(), "unknown.json", &SMALL.replace("\"hidden\"", "\"hiden\""));
    let o = run(&["train", "--config", p(&unknown), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("r").exists(), "nothing runs on a bad config");
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out), "--selector", "retrieve", "--budget", "0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows[0], vec!["epoch", "accuracy", "labeled_loss", "grad_evals", "ood_fraction"]);
    assert_eq!(rows.len(), 1 + 6);
    for f in ["result.json", "checkpoint.json", "timing.json", "selections.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn full_training_costs_m_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("run");
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&out), "--selector", "full"]).status.success());
    let rows = csv_rows(&out.join("metrics.csv"));
    assert!(rows[1..].iter().all(|r| r[3] == "190"));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timing.json" {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn repeated_runs_are_byte_identical_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", SMALL);
    let mut snaps = Vec::new();
    for (i, jobs) in ["1", "1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let o = run(&["train", "--config", p(&cfg), "--out", p(&out), "--seed", "7", "--seeds", "3", "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        snaps.push(snapshot(&out));
    }
    assert_eq!(snaps[0].len(), 3 * 4);
    assert_eq!(snaps[0], snaps[1]);
    assert_eq!(snaps[0], snaps[2]);
}

fn trained_checkpoint(tmp: &Path) -> (PathBuf, PathBuf) {
    let cfg = config(tmp, "c.json", SMALL);
    let out = tmp.join("trained");
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&out)]).status.success());
    (cfg, out.join("checkpoint.json"))
}

#[test]
fn select_full_budget_takes_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = trained_checkpoint(tmp.path());
    let out = tmp.path().join("sel");
    let o = run(&["select", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&out), "--budget", "1.0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("coreset.json")).unwrap()).unwrap();
    let mut idx: Vec<u64> = v["indices"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    idx.sort();
    assert_eq!(idx, (0..190).collect::<Vec<u64>>());
}

#[test]
fn select_twice_gives_the_same_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, ckpt) = trained_checkpoint(tmp.path());
    let mut traces = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("sel{i}"));
        let o = run(&["select", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&out), "--seed", "3"]);
        assert!(o.status.success());
        traces.push(fs::read(out.join("trace.jsonl")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_eq!(String::from_utf8_lossy(&traces[0]).lines().count(), 57);
}

#[test]
fn unknown_selector_exits_2_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", SMALL);
    let o = run(&["select", "--config", p(&cfg), "--checkpoint", "x.json", "--selector", "kmeans"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values: retrieve, random, craig, gradmatch, full"));
}

#[test]
fn verify_default_passes() {
    let o = run(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let checks: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert!(checks.len() >= 20);
    assert!(checks.iter().all(|c| c["pass"] == true));
}

#[test]
fn verify_only_taylor() {
    let o = run(&["verify", "--only", "taylor"]);
    assert!(o.status.success());
    let checks: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["name"].as_str().unwrap().starts_with("taylor.")));
}

#[test]
fn corrupted_gradient_fails_verification() {
    let o = run(&["verify", "--only", "gradients", "--corrupt-gradient"]);
    assert_eq!(o.status.code(), Some(1));
    let checks: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert!(checks.iter().any(|c| c["pass"] == false));
}

#[test]
fn report_aggregates_seeds_into_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("runs");
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&out), "--seeds", "3"]).status.success());
    let csv = tmp.path().join("table.csv");
    let o = run(&["report", p(&out), "--out", p(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][..4], &["traditional", "retrieve", "0.3", "3"]);
    let accs: Vec<f64> = (0..3)
        .map(|s| {
            let text = fs::read_to_string(out.join(format!("seed-{s}/result.json"))).unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            v["result"]["final_accuracy"].as_f64().unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((rows[1][4].parse::<f64>().unwrap() - mean).abs() < 1e-12);
    assert!((rows[1][5].parse::<f64>().unwrap() - std).abs() < 1e-12);
}

#[test]
fn report_missing_file_exits_1_naming_it() {
    let o = run(&["report", "/nonexistent/result.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/result.json"));
}
