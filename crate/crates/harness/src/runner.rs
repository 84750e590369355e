//! Executes single experiments and persists their outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use analog_grad_core::activations::{gsd, ActivationKind};
use analog_grad_core::analysis::{accumulated_error, gradient_error_surface, linspace};
use analog_grad_core::model::{build_model, train, RunStatus};
use analog_grad_core::quant::{distinct_derivative_levels, effective_bit_precision};
use analog_grad_core::{ActivationSpec, RngStream};

use crate::config::{ExperimentConfig, Mode};
use crate::dataset::{self, Loaded};
use crate::error::{HarnessError, Result};
use crate::num::fmt17;
use crate::record::{ExperimentRecord, Status};

/// Initial step for the one-sided derivative limits.
const GSD_STEP: f64 = 1e-3;

/// A finished run whose files have not been written yet.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub record: ExperimentRecord,
    /// `(file name, contents)` pairs to write next to the record.
    pub files: Vec<(String, String)>,
}

/// Runs `config` (any mode but `sweep`). Training modes use `data` when
/// given, otherwise they load the configured dataset.
pub fn execute(config: &ExperimentConfig, data: Option<&Loaded>) -> Result<Outcome> {
    let start = Instant::now();
    let digest = config.digest();
    let tag = &digest[..12];
    let mut record = ExperimentRecord {
        config_digest: digest.clone(),
        config: config.clone(),
        seed: config.seed,
        status: Status::Ok,
        metrics: Vec::new(),
        final_top1: None,
        summary: BTreeMap::new(),
        metadata: BTreeMap::new(),
        artifacts: Vec::new(),
        wall_time_s: 0.0,
    };
    let mut files = Vec::new();
    match config.mode {
        Mode::Sweep => {
            return Err(HarnessError::Config(
                "sweep configs run through `sweep`, not `run`".into(),
            ))
        }
        Mode::Train => {
            let owned;
            let loaded = match data {
                Some(d) => d,
                None => {
                    let source = config.dataset.as_ref().expect("validated");
                    owned = dataset::load(source)?;
                    &owned
                }
            };
            let model_cfg = config.resolved_model()?;
            let mut tc = config.train.clone().expect("validated");
            tc.seed = config.seed;
            let mut model = build_model(&model_cfg, config.seed)?;
            let history = train(&mut model, &loaded.dataset, &tc)?;
            if history.status == RunStatus::Diverged {
                record.status = Status::Diverged;
            }
            record.final_top1 = history.epochs.last().map(|m| m.test_top1);
            let mut csv = String::from("epoch,train_loss,test_top1\n");
            for m in &history.epochs {
                let _ = writeln!(csv, "{},{},{}", m.epoch, fmt17(m.train_loss), fmt17(m.test_top1));
            }
            files.push((format!("metrics-{tag}.csv"), csv));
            record.metrics = history.epochs;
            record
                .metadata
                .insert("parameters".into(), model.param_count().to_string());
            record
                .metadata
                .insert("noisy-eval".into(), tc.noisy_eval.to_string());
            for (k, v) in &loaded.notes {
                record.metadata.insert(k.clone(), v.clone());
            }
        }
        Mode::AnalyzeGsd => {
            let mut csv = String::from("activation,i,s,alpha,x0,gsd\n");
            for spec in interp_variants(config) {
                for &x0 in &config.analysis.points {
                    let g = gsd(&spec, x0, GSD_STEP)?;
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        spec.kind.name(),
                        fmt17(spec.i),
                        fmt17(spec.s),
                        fmt17(spec.alpha),
                        fmt17(x0),
                        fmt17(g)
                    );
                    record.summary.insert(summary_key(config, &spec, &format!("gsd@{}", fmt17(x0))), g);
                }
            }
            files.push((format!("gsd-{tag}.csv"), csv));
        }
        Mode::AnalyzeSurface => {
            let noise = config.noise.as_ref().expect("validated").resolve()?;
            let grid = linspace(-1.0, 1.0, config.analysis.grid_points);
            let mut csv = String::from("activation,i,bits,ep,x_i,x_w,value\n");
            let mut metas = Vec::new();
            for spec in interp_variants(config) {
                let surface = gradient_error_surface(
                    &spec,
                    noise.bits,
                    noise.ep,
                    &grid,
                    config.analysis.trials,
                    RngStream::new(config.seed, 0),
                )?;
                for (xi, xw, v) in surface.cells() {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        spec.kind.name(),
                        fmt17(spec.i),
                        noise.bits,
                        fmt17(noise.ep),
                        fmt17(xi),
                        fmt17(xw),
                        fmt17(v)
                    );
                }
                let thr = config.analysis.near_zero;
                let mut put = |name: &str, v: f64| {
                    record.summary.insert(summary_key(config, &spec, name), v);
                };
                put("mean", surface.mean());
                put("max", surface.max());
                put("median", surface.median());
                if let Some(v) = surface.near_zero_mean(thr) {
                    put("near-zero-mean", v);
                }
                if let Some(v) = surface.far_mean(thr) {
                    put("far-mean", v);
                }
                metas.push(surface.meta);
            }
            files.push((format!("surface-{tag}.csv"), csv));
            let meta = serde_json::json!({ "grid": grid, "surfaces": metas });
            files.push((
                format!("surface-{tag}.meta.json"),
                serde_json::to_string_pretty(&meta).expect("meta serializes"),
            ));
        }
        Mode::AnalyzeAccum => {
            let noise = config.noise.as_ref().expect("validated").resolve()?;
            let spec = config.activation;
            let mut csv = String::from("activation,x,n,sigma,mean,reference,deviation,std_error\n");
            for (k, &x) in config.analysis.points.iter().enumerate() {
                let r = accumulated_error(
                    &spec,
                    x,
                    config.analysis.n,
                    noise.sigma,
                    RngStream::new(config.seed, k as u64),
                )
                .map_err(|e| e.within("noise"))?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    spec.kind.name(),
                    fmt17(x),
                    r.n,
                    fmt17(r.sigma),
                    fmt17(r.mean),
                    fmt17(r.reference),
                    fmt17(r.deviation()),
                    fmt17(r.std_error)
                );
                record.summary.insert(format!("mean@{}", fmt17(x)), r.mean);
                record.summary.insert(format!("deviation@{}", fmt17(x)), r.deviation());
            }
            files.push((format!("accum-{tag}.csv"), csv));
        }
        Mode::AnalyzeEbp => {
            let bits = config.noise.as_ref().map_or(6, |n| n.bits);
            let window = config.analysis.window;
            let mut csv = String::from("activation,s,bits,window,levels,ebp\n");
            for &s in &config.analysis.s_values {
                let spec = if matches!(config.activation.kind, ActivationKind::Gelu | ActivationKind::ScaledGelu) {
                    ActivationSpec::scaled_gelu(s)
                } else {
                    ActivationSpec { s, ..config.activation }
                };
                let ebp = effective_bit_precision(&spec, bits, window)?;
                let levels = distinct_derivative_levels(&spec, bits, window);
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    spec.kind.name(),
                    fmt17(s),
                    bits,
                    fmt17(window),
                    levels,
                    fmt17(ebp)
                );
                record.summary.insert(format!("ebp@s={}", fmt17(s)), ebp);
            }
            files.push((format!("ebp-{tag}.csv"), csv));
        }
    }
    record.artifacts = files.iter().map(|(name, _)| name.clone()).collect();
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(Outcome { record, files })
}

/// The configured activation, or one copy per `analysis.i-values` entry
/// when that list is nonempty.
fn interp_variants(config: &ExperimentConfig) -> Vec<ActivationSpec> {
    if config.analysis.i_values.is_empty() {
        vec![config.activation]
    } else {
        config
            .analysis
            .i_values
            .iter()
            .map(|&i| ActivationSpec { i, ..config.activation })
            .collect()
    }
}

fn summary_key(config: &ExperimentConfig, spec: &ActivationSpec, name: &str) -> String {
    if config.analysis.i_values.is_empty() {
        name.to_string()
    } else {
        format!("i={}/{name}", fmt17(spec.i))
    }
}

/// Writes the outcome's files and then its record into `dir`. Existing
/// records are left untouched.
pub fn persist(outcome: &Outcome, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let record_path = outcome.record.path_in(dir);
    if record_path.exists() {
        return Ok(record_path);
    }
    for (name, contents) in &outcome.files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(HarnessError::io(&path))?;
    }
    Ok(outcome.record.write(dir)?.0)
}

/// Runs one config and persists it. An existing record with the same digest
/// is returned as is instead of re-running.
pub fn run(config: &ExperimentConfig, dir: &Path) -> Result<(ExperimentRecord, PathBuf)> {
    let existing = dir.join(ExperimentRecord::file_name(&config.digest()));
    if existing.exists() {
        return Ok((ExperimentRecord::read(&existing)?, existing));
    }
    let outcome = execute(config, None)?;
    let path = persist(&outcome, dir)?;
    Ok((outcome.record, path))
}
