//! Cartesian hyperparameter sweeps with resume and a summary matrix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::config::{Axis, ExperimentConfig, Mode, SweepCell};
use crate::dataset;
use crate::error::{HarnessError, Result};
use crate::num::fmt17;
use crate::record::ExperimentRecord;
use crate::runner::{execute, persist};

pub const DEFAULT_CAP: usize = 500;
pub const PLAN_FILE: &str = "sweep-plan.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Cells of a sweep as written to [`PLAN_FILE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Plan {
    pub axes: Vec<(Axis, Vec<f64>)>,
    pub cells: Vec<PlannedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlannedCell {
    pub digest: String,
    pub values: Vec<(Axis, f64)>,
}

impl Plan {
    pub fn read(dir: &Path) -> Result<Option<Plan>> {
        let path = dir.join(PLAN_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| HarnessError::data(&path, e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Records in cell order.
    pub records: Vec<ExperimentRecord>,
    pub summary: PathBuf,
    /// Cells that already had a record and were not re-run.
    pub skipped: usize,
}

/// Runs every cell of `config`'s sweep on `workers` threads, writing
/// records as cells finish and `summary.csv` at the end.
pub fn sweep(config: &ExperimentConfig, dir: &Path, workers: usize, cap: usize) -> Result<SweepOutcome> {
    if config.mode != Mode::Sweep {
        return Err(HarnessError::Config(format!(
            "`sweep` needs mode `sweep`, got `{}`",
            config.mode.name()
        )));
    }
    let total = config.cell_count();
    if total > cap {
        return Err(HarnessError::Config(format!(
            "sweep has {total} cells, which exceeds the cap of {cap}"
        )));
    }
    let cells = config.cells()?;
    let digests: Vec<String> = cells.iter().map(|c| c.config.digest()).collect();
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let plan = Plan {
        axes: config.sweep_axes.iter().map(|(a, v)| (*a, v.clone())).collect(),
        cells: cells
            .iter()
            .zip(&digests)
            .map(|(c, d)| PlannedCell {
                digest: d.clone(),
                values: c.values.clone(),
            })
            .collect(),
    };
    let plan_path = dir.join(PLAN_FILE);
    std::fs::write(&plan_path, serde_json::to_string_pretty(&plan).expect("plan serializes"))
        .map_err(HarnessError::io(&plan_path))?;

    let mut records: Vec<Option<ExperimentRecord>> = vec![None; cells.len()];
    let mut pending = Vec::new();
    for (k, digest) in digests.iter().enumerate() {
        let path = dir.join(ExperimentRecord::file_name(digest));
        if path.exists() {
            records[k] = Some(ExperimentRecord::read(&path)?);
        } else {
            pending.push(k);
        }
    }
    let skipped = cells.len() - pending.len();

    if !pending.is_empty() {
        let source = config.dataset.as_ref().expect("validated");
        let loaded = dataset::load(source)?;
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, Result<crate::runner::Outcome>)>();
        let workers = workers.clamp(1, pending.len());
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, pending, cells, loaded) = (&next, &pending, &cells, &loaded);
                scope.spawn(move || loop {
                    let j = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&k) = pending.get(j) else { break };
                    let cell: &SweepCell = &cells[k];
                    if tx.send((k, execute(&cell.config, Some(loaded)))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut first_err = None;
            for (k, result) in rx {
                match result.and_then(|outcome| persist(&outcome, dir).map(|_| outcome.record)) {
                    Ok(record) => records[k] = Some(record),
                    Err(e) => {
                        // stop handing out new cells; running ones finish
                        next.store(usize::MAX / 2, Ordering::Relaxed);
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        })?;
    }

    let records: Vec<ExperimentRecord> = records.into_iter().map(|r| r.expect("every cell ran")).collect();
    let summary = dir.join(SUMMARY_FILE);
    let text = summary_table(&plan, &records);
    std::fs::write(&summary, text).map_err(HarnessError::io(&summary))?;
    Ok(SweepOutcome {
        records,
        summary,
        skipped,
    })
}

/// Matrix of final top-1 values: one row per combination of all but the
/// last axis, one column per value of the last axis. A single-axis sweep
/// gives a two-column table.
pub fn summary_table(plan: &Plan, records: &[ExperimentRecord]) -> String {
    let cell = |r: &ExperimentRecord| r.final_top1.map(fmt17).unwrap_or_default();
    let mut out = String::new();
    let names: Vec<&str> = plan.axes.iter().map(|(a, _)| a.name()).collect();
    if plan.axes.len() == 1 {
        let _ = writeln!(out, "{},final_top1", names[0]);
        for (c, r) in plan.cells.iter().zip(records) {
            let _ = writeln!(out, "{},{}", fmt17(c.values[0].1), cell(r));
        }
        return out;
    }
    let (last, last_values) = plan.axes.last().expect("nonempty axes");
    out.push_str(&names[..names.len() - 1].join(","));
    for v in last_values {
        let _ = write!(out, ",{}={}", last.name(), fmt17(*v));
    }
    out.push('\n');
    for (row_cells, row_records) in plan.cells.chunks(last_values.len()).zip(records.chunks(last_values.len())) {
        let keys: Vec<String> = row_cells[0].values[..names.len() - 1]
            .iter()
            .map(|(_, v)| fmt17(*v))
            .collect();
        out.push_str(&keys.join(","));
        for r in row_records {
            let _ = write!(out, ",{}", cell(r));
        }
        out.push('\n');
    }
    out
}
