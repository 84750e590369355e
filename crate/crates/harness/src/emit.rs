//! Tidy plot-data tables assembled from experiment records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::{HarnessError, Result};
use crate::num::fmt17;
use crate::record::{read_all, ExperimentRecord};
use crate::sweep::Plan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Gradient step discontinuity against interpolation factor.
    GsdVsI,
    /// Final accuracy of training runs against interpolation factor.
    AccuracyVsI,
    /// Gradient-error surface cells.
    Surface,
    /// Accumulated derivative error.
    Accum,
    /// Effective bit precision against scaling factor.
    Ebp,
    /// Final accuracy against layer counts.
    Depth,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::GsdVsI => "gsd-vs-i",
            PlotKind::AccuracyVsI => "accuracy-vs-i",
            PlotKind::Surface => "surface",
            PlotKind::Accum => "accum",
            PlotKind::Ebp => "ebp",
            PlotKind::Depth => "depth",
        }
    }

    fn source_mode(self) -> Mode {
        match self {
            PlotKind::GsdVsI => Mode::AnalyzeGsd,
            PlotKind::Surface => Mode::AnalyzeSurface,
            PlotKind::Accum => Mode::AnalyzeAccum,
            PlotKind::Ebp => Mode::AnalyzeEbp,
            PlotKind::AccuracyVsI | PlotKind::Depth => Mode::Train,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmitReport {
    pub path: PathBuf,
    /// Data rows written (header excluded).
    pub rows: usize,
    /// Spearman rank correlation of interpolation factor and accuracy, for
    /// `accuracy-vs-i`.
    pub spearman: Option<f64>,
}

pub const TRAIN_COLUMNS: &str =
    "activation,i,s,alpha,bits,ep,learning-rate,linear-layers,conv-layers,seed,status,final_top1,digest";

/// Writes `plotdata-<kind>.csv` into `dir` from the records found there.
pub fn emit(dir: &Path, kind: PlotKind) -> Result<EmitReport> {
    let records: Vec<ExperimentRecord> = read_all(dir)?
        .into_iter()
        .filter(|r| r.config.mode == kind.source_mode())
        .collect();
    if kind.source_mode() == Mode::Train {
        if let Some(plan) = Plan::read(dir)? {
            let absent: Vec<String> = plan
                .cells
                .iter()
                .filter(|c| !records.iter().any(|r| r.config_digest == c.digest))
                .map(|c| {
                    let vals: Vec<String> = c
                        .values
                        .iter()
                        .map(|(a, v)| format!("{}={}", a.name(), fmt17(*v)))
                        .collect();
                    format!("[{}]", vals.join(" "))
                })
                .collect();
            if !absent.is_empty() {
                return Err(HarnessError::MissingRecords(format!(
                    "{} of {} sweep cells have no record: {}",
                    absent.len(),
                    plan.cells.len(),
                    absent.join(", ")
                )));
            }
        }
    }
    if records.is_empty() {
        return Err(HarnessError::MissingRecords(format!(
            "no `{}` records in {} for `{}`",
            kind.source_mode().name(),
            dir.display(),
            kind.name()
        )));
    }
    let path = dir.join(format!("plotdata-{}.csv", kind.name()));
    let (text, rows, spearman) = match kind {
        PlotKind::AccuracyVsI | PlotKind::Depth => train_table(&records, kind),
        _ => concat_artifacts(dir, &records)?,
    };
    std::fs::write(&path, text).map_err(HarnessError::io(&path))?;
    Ok(EmitReport { path, rows, spearman })
}

fn concat_artifacts(dir: &Path, records: &[ExperimentRecord]) -> Result<(String, usize, Option<f64>)> {
    let mut out = String::new();
    let mut header: Option<String> = None;
    let mut rows = 0;
    for r in records {
        for name in r.artifacts.iter().filter(|n| n.ends_with(".csv")) {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
            let mut lines = text.lines();
            let h = lines.next().unwrap_or_default().to_string();
            match &header {
                None => {
                    out.push_str(&h);
                    out.push('\n');
                    header = Some(h);
                }
                Some(existing) if *existing != h => {
                    return Err(HarnessError::data(&path, format!("header `{h}` differs from `{existing}`")))
                }
                Some(_) => {}
            }
            for line in lines.filter(|l| !l.is_empty()) {
                out.push_str(line);
                out.push('\n');
                rows += 1;
            }
        }
    }
    Ok((out, rows, None))
}

struct TrainRow {
    key: Vec<f64>,
    line: String,
    i: f64,
    top1: Option<f64>,
}

fn train_table(records: &[ExperimentRecord], kind: PlotKind) -> (String, usize, Option<f64>) {
    let mut rows: Vec<TrainRow> = records
        .iter()
        .map(|r| {
            let c = &r.config;
            let a = c.activation;
            let noise = c.noise.as_ref().and_then(|n| n.resolve().ok());
            let (bits, ep) = noise.map_or((0.0, 0.0), |n| (n.bits as f64, n.ep));
            let lr = c.train.as_ref().map_or(f64::NAN, |t| t.learning_rate);
            let preset = c.model.as_ref().and_then(|m| m.preset);
            let (lin, conv) = preset.map_or((0.0, 0.0), |p| (p.linear_layers as f64, p.conv_layers as f64));
            let status = match r.status {
                crate::record::Status::Ok => "ok",
                crate::record::Status::Diverged => "diverged",
            };
            let line = format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                a.kind.name(),
                fmt17(a.i),
                fmt17(a.s),
                fmt17(a.alpha),
                bits,
                fmt17(ep),
                fmt17(lr),
                lin,
                conv,
                r.seed,
                status,
                r.final_top1.map(fmt17).unwrap_or_default(),
                r.config_digest
            );
            let key = match kind {
                PlotKind::Depth => vec![lin, conv, a.i, a.alpha, a.s, bits, ep, lr],
                _ => vec![bits, ep, lr, a.alpha, a.s, lin, conv, a.i],
            };
            TrainRow {
                key,
                line,
                i: a.i,
                top1: r.final_top1,
            }
        })
        .collect();
    rows.sort_by(|x, y| {
        x.key
            .iter()
            .zip(&y.key)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = String::from(TRAIN_COLUMNS);
    out.push('\n');
    for r in &rows {
        let _ = writeln!(out, "{}", r.line);
    }
    let spearman = (kind == PlotKind::AccuracyVsI)
        .then(|| {
            let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.i, r.top1?))).collect();
            spearman(&pairs)
        })
        .flatten();
    (out, rows.len(), spearman)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &idx[start..=end] {
            out[k] = rank;
        }
        start = end + 1;
    }
    out
}

/// Spearman's rho with average ranks for ties; `None` when either variable
/// is constant or there are fewer than two pairs.
pub fn spearman(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (rx, ry) = (ranks(&xs), ranks(&ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
