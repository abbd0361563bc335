//! Metrics rows, aggregation and CSV export.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::config::ShiftSetting;
use super::run::ReplicateResult;
use crate::error::{Error, Result};
use crate::homeostat::Controller;

pub const METRICS_HEADER: [&str; 10] = [
    "replicate",
    "learner",
    "shift_rate",
    "epoch",
    "presentation",
    "val_accuracy",
    "val_loss",
    "lr",
    "ingest_rate",
    "train_accuracy",
];

pub const AGGREGATE_HEADER: [&str; 8] = [
    "learner",
    "shift_rate",
    "epoch",
    "acc_mean",
    "acc_sem",
    "lr_mean",
    "lr_sem",
    "n_replicates",
];

/// One validation checkpoint of one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub replicate: u32,
    pub learner: Controller,
    /// Swap rate in effect during `epoch`.
    pub shift_rate: f64,
    pub epoch: u64,
    /// Presentations served so far.
    pub presentation: u64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Fraction of presentations since the last checkpoint whose effect was
    /// applied to the learning rate.
    pub ingest_rate: f64,
    /// Fraction of those presentations classified correctly before training.
    pub train_accuracy: f64,
}

/// End-of-epoch statistics across replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub learner: Controller,
    pub shift_rate: f64,
    pub epoch: u64,
    pub acc_mean: f64,
    pub acc_sem: f64,
    pub lr_mean: f64,
    pub lr_sem: f64,
    /// Replicates that reached this epoch. Fewer than configured flags a
    /// cell with aborted replicates.
    pub n_replicates: usize,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
/// The error is exactly 0 for a single value or identical values.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups replicates by `(learner, setting)` in order of first appearance and
/// summarizes the last checkpoint of every epoch.
pub fn aggregate(replicates: &[ReplicateResult]) -> Vec<AggregateRow> {
    let mut series: Vec<((Controller, ShiftSetting), Vec<&ReplicateResult>)> = Vec::new();
    for r in replicates {
        let key = (r.learner, r.setting);
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => series.push((key, vec![r])),
        }
    }
    let mut out = Vec::new();
    for ((learner, _), reps) in series {
        let max_epoch = reps.iter().flat_map(|r| r.rows.last()).map(|row| row.epoch).max();
        let Some(max_epoch) = max_epoch else { continue };
        for epoch in 0..=max_epoch {
            let finals: Vec<&MetricsRow> = reps
                .iter()
                .filter_map(|r| r.rows.iter().rev().find(|row| row.epoch == epoch))
                .collect();
            if finals.is_empty() {
                continue;
            }
            let acc: Vec<f64> = finals.iter().map(|r| r.val_accuracy).collect();
            let lr: Vec<f64> = finals.iter().map(|r| r.lr).collect();
            let (acc_mean, acc_sem) = mean_sem(&acc);
            let (lr_mean, lr_sem) = mean_sem(&lr);
            out.push(AggregateRow {
                learner,
                shift_rate: finals[0].shift_rate,
                epoch,
                acc_mean,
                acc_sem,
                lr_mean,
                lr_sem,
                n_replicates: finals.len(),
            });
        }
    }
    out
}

/// `%.9g`: nine significant digits, trailing zeros dropped, exponent form
/// below `1e-4` or from `1e9` up.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let kind = std::io::ErrorKind::Other;
    Error::io(path, std::io::Error::new(kind, e.to_string()))
}

/// Writes metrics rows with a header, in the given order.
pub fn write_csv<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.learner.name().to_string(),
            fmt_float(r.shift_rate),
            r.epoch.to_string(),
            r.presentation.to_string(),
            fmt_float(r.val_accuracy),
            fmt_float(r.val_loss),
            fmt_float(r.lr),
            fmt_float(r.ingest_rate),
            fmt_float(r.train_accuracy),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_aggregate_csv<'a>(rows: impl IntoIterator<Item = &'a AggregateRow>, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.learner.name().to_string(),
            fmt_float(r.shift_rate),
            r.epoch.to_string(),
            fmt_float(r.acc_mean),
            fmt_float(r.acc_sem),
            fmt_float(r.lr_mean),
            fmt_float(r.lr_sem),
            r.n_replicates.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_aggregate_csv`].
pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(AGGREGATE_HEADER) {
        return Err(Error::Format(format!(
            "{}: expected header {}",
            path.display(),
            AGGREGATE_HEADER.join(",")
        )));
    }
    let bad = |line: usize, what: &str| Error::Format(format!("{}:{line}: bad {what}", path.display()));
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(line, AGGREGATE_HEADER[k]));
        out.push(AggregateRow {
            learner: Controller::parse(&rec[0]).ok_or_else(|| bad(line, "learner"))?,
            shift_rate: f(1)?,
            epoch: rec[2].parse().map_err(|_| bad(line, "epoch"))?,
            acc_mean: f(3)?,
            acc_sem: f(4)?,
            lr_mean: f(5)?,
            lr_sem: f(6)?,
            n_replicates: rec[7].parse().map_err(|_| bad(line, "n_replicates"))?,
        });
    }
    Ok(out)
}

/// One line per aborted replicate.
pub fn write_failures(replicates: &[ReplicateResult], path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::from("replicate,learner,setting,presentation,reason\n");
    for r in replicates {
        if let Some(fail) = &r.failure {
            s.push_str(&format!(
                "{},{},{},{},\"{}\"\n",
                r.replicate,
                r.learner,
                r.setting.label(),
                fail.presentation,
                fail.reason.replace('"', "'")
            ));
        }
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}
