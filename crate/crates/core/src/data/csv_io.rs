//! CSV persistence.
//!
//! Header is `f0,...,f{d-1},label`; unlabeled exports may add an `ood` column
//! holding 0/1, and leave `label` empty for points without a known class.
//! Values are written with 17 significant digits, so a save/load cycle
//! reproduces every `f64` exactly. UTF-8, LF line endings.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, Matrix, UnlabeledSet};
use crate::error::{Error, Result};

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(d: usize, with_ood: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
    h.push("label".into());
    if with_ood {
        h.push("ood".into());
    }
    h
}

pub(crate) fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            Error::parse(line, format!("expected {expected_len} columns, found {len}"))
        }
        other => Error::parse(line, format!("{other:?}")),
    }
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(File::create(path)?);
    w.write_record(header(ds.dim(), false)).map_err(csv_err)?;
    for (row, label) in ds.features.iter_rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        rec.push(label.to_string());
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_unlabeled_csv(u: &UnlabeledSet, path: impl AsRef<Path>) -> Result<()> {
    let flags = u.ood_flags();
    let mut w = writer(File::create(path)?);
    w.write_record(header(u.dim(), flags.is_some())).map_err(csv_err)?;
    for j in 0..u.len() {
        let mut rec: Vec<String> = u.point(j).iter().map(|&x| fmt_f64(x)).collect();
        rec.push(match u.hidden_labels().and_then(|h| h[j]) {
            Some(l) => l.to_string(),
            None => String::new(),
        });
        if let Some(f) = flags {
            rec.push(if f[j] { "1".into() } else { "0".into() });
        }
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

struct RawTable {
    d: usize,
    features: Vec<f64>,
    labels: Vec<Option<usize>>,
    ood: Option<Vec<bool>>,
}

fn parse_table<R: Read>(input: R, allow_missing_label: bool) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::parse(1, "empty file"));
    }
    let cols: Vec<&str> = headers.iter().collect();
    let label_col =
        cols.iter().position(|&c| c == "label").ok_or_else(|| Error::parse(1, "header has no `label` column"))?;
    let has_ood = match &cols[label_col + 1..] {
        [] => false,
        ["ood"] if allow_missing_label => true,
        _ => return Err(Error::parse(1, "unexpected columns after `label`")),
    };
    let d = label_col;
    if d == 0 {
        return Err(Error::parse(1, "no feature columns"));
    }
    for (i, c) in cols[..d].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(Error::parse(1, format!("expected column f{i}, found `{c}`")));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut ood = has_ood.then(Vec::new);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        for (i, field) in rec.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("feature f{i} is not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("feature f{i} is not finite")));
            }
            features.push(v);
        }
        let raw = rec[d].trim();
        let label = if raw.is_empty() && allow_missing_label {
            None
        } else {
            Some(raw.parse::<usize>().map_err(|_| Error::parse(line, format!("unknown label `{raw}`")))?)
        };
        labels.push(label);
        if let Some(o) = ood.as_mut() {
            o.push(match rec[d + 1].trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(line, format!("ood flag must be 0 or 1, found `{other}`"))),
            });
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(2, "no data rows"));
    }
    Ok(RawTable { d, features, labels, ood })
}

/// Loads a labeled dataset. The class count is one more than the largest label.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let t = parse_table(File::open(path)?, false)?;
    let labels: Vec<usize> = t.labels.into_iter().map(|l| l.expect("labels required")).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(Matrix::new(labels.len(), t.d, t.features)?, labels, class_count)
}

pub fn load_unlabeled_csv(path: impl AsRef<Path>) -> Result<UnlabeledSet> {
    let t = parse_table(File::open(path)?, true)?;
    let m = t.labels.len();
    let hidden = t.labels.iter().any(Option::is_some).then_some(t.labels);
    UnlabeledSet::new(Matrix::new(m, t.d, t.features)?, hidden, t.ood)
}
