//! Experiment records: one JSON file per run, named by config digest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use analog_grad_core::model::EpochMetrics;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentRecord {
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub status: Status,
    /// Per-epoch training metrics (empty for analysis modes).
    #[serde(default)]
    pub metrics: Vec<EpochMetrics>,
    #[serde(default)]
    pub final_top1: Option<f64>,
    /// Scalar results of analysis modes.
    #[serde(default)]
    pub summary: BTreeMap<String, f64>,
    /// Free-form notes, e.g. dataset preprocessing.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Files written next to the record, relative to the output directory.
    #[serde(default)]
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

impl ExperimentRecord {
    pub fn file_name(digest: &str) -> String {
        format!("record-{digest}.json")
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(Self::file_name(&self.config_digest))
    }

    /// True when the stored digest matches a re-hash of the stored config.
    pub fn verify(&self) -> bool {
        self.config.digest() == self.config_digest
    }

    /// Writes the record unless one with the same digest already exists.
    /// Returns the path and whether a new file was written.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, bool)> {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let path = self.path_in(dir);
        if path.exists() {
            return Ok((path, false));
        }
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(HarnessError::io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(HarnessError::io(&path))?;
        Ok((path, true))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let record: ExperimentRecord =
            serde_json::from_str(&text).map_err(|e| HarnessError::data(path, e.to_string()))?;
        if !record.verify() {
            return Err(HarnessError::data(path, "config digest does not match stored config"));
        }
        Ok(record)
    }
}

/// All records in `dir`, sorted by file name.
pub fn read_all(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(HarnessError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("record-") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| ExperimentRecord::read(p)).collect()
}
