//! Experiment configuration: JSON schema, validation, sweep axes and
//! content digests.

use std::path::{Path, PathBuf};

use analog_grad_core::data::SyntheticSpec;
use analog_grad_core::model::{ModelConfig, TrainConfig};
use analog_grad_core::{ActivationSpec, QuantNoiseSpec};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Sweep,
    AnalyzeGsd,
    AnalyzeSurface,
    AnalyzeAccum,
    AnalyzeEbp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Sweep => "sweep",
            Mode::AnalyzeGsd => "analyze-gsd",
            Mode::AnalyzeSurface => "analyze-surface",
            Mode::AnalyzeAccum => "analyze-accum",
            Mode::AnalyzeEbp => "analyze-ebp",
        }
    }
}

/// Hyperparameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// Interpolation factor of the activation.
    I,
    Bits,
    Ep,
    #[serde(alias = "lr")]
    LearningRate,
    Alpha,
    /// GELU scaling factor.
    S,
    LinearLayers,
    ConvLayers,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::I => "i",
            Axis::Bits => "bits",
            Axis::Ep => "ep",
            Axis::LearningRate => "learning-rate",
            Axis::Alpha => "alpha",
            Axis::S => "s",
            Axis::LinearLayers => "linear-layers",
            Axis::ConvLayers => "conv-layers",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Axis::Bits | Axis::LinearLayers | Axis::ConvLayers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "source",
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    deny_unknown_fields
)]
pub enum DatasetSource {
    /// Generated shape/texture images.
    Synthetic {
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default = "six_hundred")]
        samples_per_class: usize,
        #[serde(default = "sixteen")]
        size: usize,
        #[serde(default = "pixel_noise")]
        pixel_noise: f64,
        /// Generator seed; independent of the experiment seed.
        #[serde(default)]
        seed: u64,
    },
    /// Two separable Gaussian blobs.
    Blobs {
        dim: usize,
        per_class: usize,
        #[serde(default = "two")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// One row per sample, label first.
    Csv {
        train: PathBuf,
        test: PathBuf,
        /// Per-sample shape, e.g. `[1, 16, 16]` or `[3, 32, 32]`.
        shape: Vec<usize>,
        classes: usize,
        #[serde(default)]
        normalize: Normalize,
        #[serde(default)]
        grayscale: bool,
    },
    /// Binary idx files.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
        #[serde(default)]
        grayscale: bool,
    },
}

fn ten() -> usize {
    10
}
fn six_hundred() -> usize {
    600
}
fn sixteen() -> usize {
    16
}
fn pixel_noise() -> f64 {
    SyntheticSpec::default().pixel_noise
}
fn two() -> f64 {
    2.0
}

impl DatasetSource {
    pub fn synthetic(spec: &SyntheticSpec) -> Self {
        DatasetSource::Synthetic {
            classes: spec.classes,
            samples_per_class: spec.samples_per_class,
            size: spec.size,
            pixel_noise: spec.pixel_noise,
            seed: spec.seed,
        }
    }
}

/// How raw CSV feature values map into the analog range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    /// Values are used as written.
    #[default]
    None,
    /// Bytes in `[0, 255]` map linearly onto `[-1, 1]`.
    Byte,
}

/// Parameters of the analysis modes; unused fields are ignored by the other
/// modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalysisConfig {
    /// Points at which to evaluate the gradient step discontinuity or the
    /// accumulated error.
    #[serde(default = "zero_point")]
    pub points: Vec<f64>,
    /// Interpolation factors for `analyze-gsd` and `analyze-surface`; empty
    /// means the activation as configured.
    #[serde(default)]
    pub i_values: Vec<f64>,
    /// Scaling factors for `analyze-ebp`.
    #[serde(default = "default_s_values")]
    pub s_values: Vec<f64>,
    #[serde(default = "eleven")]
    pub grid_points: usize,
    #[serde(default = "ten_thousand")]
    pub trials: usize,
    /// Mini-batch size of the accumulated error.
    #[serde(default = "million")]
    pub n: usize,
    #[serde(default = "default_window")]
    pub window: f64,
    /// `|x_i x_w|` below which a surface cell counts as near zero.
    #[serde(default = "near_zero")]
    pub near_zero: f64,
}

fn zero_point() -> Vec<f64> {
    vec![0.0]
}
fn default_s_values() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 5.0, 10.0]
}
fn eleven() -> usize {
    11
}
fn ten_thousand() -> usize {
    10_000
}
fn million() -> usize {
    1_000_000
}
fn default_window() -> f64 {
    1.0
}
fn near_zero() -> f64 {
    0.05
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub activation: ActivationSpec,
    /// Analog noise used by presets, surfaces and the accumulated error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<QuantNoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub sweep_axes: IndexMap<Axis, Vec<f64>>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Output directory; excluded from the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn field_err(field: &str, reason: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("`{field}`: {reason}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(message) => HarnessError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates; serde errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.activation
            .validate()
            .map_err(|e| e.within("activation"))?;
        if let Some(noise) = &self.noise {
            noise.resolve().map_err(|e| e.within("noise"))?;
        }
        match (self.mode == Mode::Sweep, self.sweep_axes.is_empty()) {
            (true, true) => return Err(field_err("sweep-axes", "sweep mode needs at least one axis")),
            (false, false) => {
                return Err(field_err(
                    "sweep-axes",
                    format!("only allowed in sweep mode, not `{}`", self.mode.name()),
                ))
            }
            _ => {}
        }
        for (axis, values) in &self.sweep_axes {
            let path = format!("sweep-axes.{}", axis.name());
            if values.is_empty() {
                return Err(field_err(&path, "has no values"));
            }
            for &v in values {
                if axis.is_integer() && (v.fract() != 0.0 || v < 0.0) {
                    return Err(field_err(&path, format!("{v} is not a non-negative integer")));
                }
            }
            // every value must produce a valid cell on its own
            for &v in values {
                let mut cell = self.clone();
                cell.sweep_axes.clear();
                cell.mode = Mode::Train;
                cell.apply_axis(*axis, v)
                    .map_err(|e| field_err(&path, e))?;
                cell.activation
                    .validate()
                    .map_err(|e| field_err(&path, e))?;
                if let Some(noise) = &cell.noise {
                    noise.resolve().map_err(|e| field_err(&path, e))?;
                }
            }
        }
        if matches!(self.mode, Mode::Train | Mode::Sweep) {
            if self.model.is_none() {
                return Err(field_err("model", "required for training"));
            }
            if self.train.is_none() {
                return Err(field_err("train", "required for training"));
            }
            if self.dataset.is_none() {
                return Err(field_err("dataset", "required for training"));
            }
            if self.mode == Mode::Train {
                self.resolved_model()?;
            }
        }
        if let Some(tc) = &self.train {
            tc.validate(usize::MAX).map_err(|e| e.within("train"))?;
        }
        if matches!(self.mode, Mode::AnalyzeSurface | Mode::AnalyzeAccum) && self.noise.is_none() {
            return Err(field_err("noise", format!("required by `{}`", self.mode.name())));
        }
        let a = &self.analysis;
        if a.points.is_empty() || a.points.iter().any(|p| !p.is_finite()) {
            return Err(field_err("analysis.points", "needs finite values"));
        }
        if a.i_values.iter().any(|i| !(0.0..=1.0).contains(i)) {
            return Err(field_err("analysis.i-values", "must lie in [0, 1]"));
        }
        if a.s_values.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(field_err("analysis.s-values", "must be positive"));
        }
        if a.grid_points < 2 || a.trials == 0 || a.n == 0 {
            return Err(field_err(
                "analysis",
                "grid-points >= 2, trials >= 1 and n >= 1 are required",
            ));
        }
        if !(a.window > 0.0 && a.window.is_finite()) {
            return Err(field_err("analysis.window", "must be positive"));
        }
        Ok(())
    }

    /// Sets one sweep axis to `value` on this config.
    pub fn apply_axis(&mut self, axis: Axis, value: f64) -> std::result::Result<(), String> {
        match axis {
            Axis::I => self.activation.i = value,
            Axis::Alpha => self.activation.alpha = value,
            Axis::S => self.activation.s = value,
            Axis::Bits | Axis::Ep => {
                let noise = self
                    .noise
                    .as_mut()
                    .ok_or_else(|| format!("axis `{}` needs a `noise` section", axis.name()))?;
                if axis == Axis::Bits {
                    noise.bits = value as u32;
                } else {
                    noise.ep = Some(value);
                    noise.sigma = None;
                }
            }
            Axis::LearningRate => {
                self.train
                    .as_mut()
                    .ok_or("axis `learning-rate` needs a `train` section")?
                    .learning_rate = value;
            }
            Axis::LinearLayers | Axis::ConvLayers => {
                let preset = self
                    .model
                    .as_mut()
                    .and_then(|m| m.preset.as_mut())
                    .ok_or_else(|| format!("axis `{}` needs a model preset", axis.name()))?;
                if axis == Axis::LinearLayers {
                    preset.linear_layers = value as usize;
                } else {
                    preset.conv_layers = value as usize;
                }
            }
        }
        Ok(())
    }

    /// The model with any preset expanded using this config's activation and
    /// noise. Explicit layers are returned as written.
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| field_err("model", "missing"))?;
        let resolved = match (&model.preset, model.layers.is_empty()) {
            (Some(preset), true) => ModelConfig {
                init_gain: model.init_gain,
                ..ModelConfig::from_preset(
                    *preset,
                    &model.input_shape,
                    model.classes,
                    &self.activation,
                    self.noise.as_ref(),
                )
                .map_err(|e| e.within("model.preset"))?
            },
            (None, true) => return Err(field_err("model", "needs `layers` or a `preset`")),
            (_, false) => model.clone(),
        };
        resolved.check().map_err(|e| e.within("model"))?;
        Ok(resolved)
    }

    /// SHA-256 over the canonical JSON form (sorted keys, `out-dir`
    /// dropped), hex encoded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// One cell of a sweep: axis values in declaration order plus the derived
/// single-run config.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub values: Vec<(Axis, f64)>,
    pub config: ExperimentConfig,
}

/// Seed of a sweep cell: a hash of the master seed and the cell's axis
/// values (sorted by axis), so adding values elsewhere leaves it unchanged.
pub fn cell_seed(master: u64, values: &[(Axis, f64)]) -> u64 {
    let mut sorted = values.to_vec();
    sorted.sort_by_key(|(a, _)| *a);
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for (axis, v) in sorted {
        h.update(axis.name().as_bytes());
        h.update([0]);
        h.update(v.to_bits().to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

impl ExperimentConfig {
    /// Number of cells in the Cartesian product of the sweep axes.
    pub fn cell_count(&self) -> usize {
        self.sweep_axes.values().map(Vec::len).product()
    }

    /// Expands the sweep into cells, last axis varying fastest.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let axes: Vec<(Axis, &Vec<f64>)> = self.sweep_axes.iter().map(|(a, v)| (*a, v)).collect();
        let total = self.cell_count();
        let mut out = Vec::with_capacity(total);
        for mut k in 0..total {
            let mut values = vec![(Axis::I, 0.0); axes.len()];
            for (slot, (axis, vals)) in values.iter_mut().zip(&axes).rev() {
                *slot = (*axis, vals[k % vals.len()]);
                k /= vals.len();
            }
            let mut config = self.clone();
            config.mode = Mode::Train;
            config.sweep_axes.clear();
            for &(axis, v) in &values {
                config
                    .apply_axis(axis, v)
                    .map_err(|e| field_err(&format!("sweep-axes.{}", axis.name()), e))?;
            }
            let seed = cell_seed(self.seed, &values);
            config.seed = seed;
            if let Some(tc) = config.train.as_mut() {
                tc.seed = seed;
            }
            config.validate()?;
            out.push(SweepCell { values, config });
        }
        Ok(out)
    }
}
