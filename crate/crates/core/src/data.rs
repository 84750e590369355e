//! In-memory labelled datasets and the deterministic synthetic generators.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngStream, Sampler};

/// Samples stored flat, one `sample_len()` run of features per label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.features.len() / self.labels.len();
        &self.features[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[channels, height, width]` for images, `[d]` for vectors.
    pub sample_shape: Vec<usize>,
    pub classes: usize,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Checks feature lengths and label ranges of both splits.
    pub fn validate(&self) -> Result<()> {
        let d = self.sample_len();
        if d == 0 || self.classes < 2 {
            return Err(Error::Config(format!(
                "dataset needs a nonempty sample shape and >= 2 classes, got {:?} and {}",
                self.sample_shape, self.classes
            )));
        }
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            if split.features.len() != split.labels.len() * d {
                return Err(Error::Config(format!(
                    "{name} split has {} values for {} samples of {d}",
                    split.features.len(),
                    split.labels.len()
                )));
            }
            if let Some(&bad) = split.labels.iter().find(|&&l| l >= self.classes) {
                return Err(Error::Config(format!(
                    "{name} split has label {bad} but only {} classes",
                    self.classes
                )));
            }
            if let Some(v) = split.features.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} split holds non-finite value {v}")));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic shape/texture image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SyntheticSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_pixel_noise")]
    pub pixel_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    10
}

fn default_per_class() -> usize {
    600
}

fn default_size() -> usize {
    16
}

fn default_pixel_noise() -> f64 {
    0.35
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: default_classes(),
            samples_per_class: default_per_class(),
            size: default_size(),
            pixel_noise: default_pixel_noise(),
            seed: 0,
        }
    }
}

/// Number of distinct generators available to [`synthetic_images`].
pub const SYNTHETIC_CLASSES: usize = 10;

/// Single-channel images in `[-1, 1]`, one generator per class, split 5:1
/// into train/test within each class. Samples are interleaved by class.
pub fn synthetic_images(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.samples_per_class < 6 {
        return Err(Error::field(
            "samples-per-class",
            format!("{} is below 6; a 5:1 split is impossible", spec.samples_per_class),
        ));
    }
    if !(2..=SYNTHETIC_CLASSES).contains(&spec.classes) {
        return Err(Error::field(
            "classes",
            format!("{} is outside [2, {SYNTHETIC_CLASSES}]", spec.classes),
        ));
    }
    if spec.size < 8 {
        return Err(Error::field("size", format!("{} is below 8", spec.size)));
    }
    if !(spec.pixel_noise >= 0.0 && spec.pixel_noise.is_finite()) {
        return Err(Error::field("pixel-noise", "must be finite and >= 0"));
    }
    let n_train = spec.samples_per_class * 5 / 6;
    let root = RngStream::new(spec.seed, 0x5348_4150_4553);
    let mut train = Split::default();
    let mut test = Split::default();
    for k in 0..spec.samples_per_class {
        let split = if k < n_train { &mut train } else { &mut test };
        for class in 0..spec.classes {
            let id = (k * spec.classes + class) as u64;
            let mut g = root.child(id).generator();
            let img = draw_image(class, spec.size, spec.pixel_noise, &mut g);
            split.features.extend_from_slice(&img);
            split.labels.push(class);
        }
    }
    Ok(Dataset {
        sample_shape: alloc::vec![1, spec.size, spec.size],
        classes: spec.classes,
        train,
        test,
    })
}

fn draw_image(class: usize, size: usize, noise: f64, g: &mut Sampler) -> Vec<f64> {
    let n = size as f64;
    let cx = n / 2.0 + g.uniform_in(-n / 8.0, n / 8.0);
    let cy = n / 2.0 + g.uniform_in(-n / 8.0, n / 8.0);
    let radius = n * g.uniform_in(0.22, 0.32);
    let period = g.uniform_in(3.0, 5.0);
    let phase = g.uniform_in(0.0, core::f64::consts::TAU);
    let contrast = g.uniform_in(0.6, 1.0);
    let tau = core::f64::consts::TAU;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (fx - cx, fy - cy);
            let r = libm::sqrt(dx * dx + dy * dy);
            let on = |b: bool| if b { 1.0 } else { -1.0 };
            let v = match class {
                0 => libm::sin(tau * fy / period + phase),
                1 => libm::sin(tau * fx / period + phase),
                2 => libm::sin(tau * (fx + fy) / (period * core::f64::consts::SQRT_2) + phase),
                3 => {
                    let cell = (period * 0.75) as usize + 1;
                    on(((x / cell) + (y / cell)) % 2 == 0)
                }
                4 => on(r < radius),
                5 => on((r - radius).abs() < 1.2),
                6 => on(dx.abs() < 1.3 || dy.abs() < 1.3),
                7 => on((dx.abs().max(dy.abs()) - radius).abs() < 1.0),
                8 => on((dx - dy).abs() < 1.5 || (dx + dy).abs() < 1.5),
                _ => on(dy > -radius && dx.abs() < (dy + radius) * 0.6 && dy < radius),
            };
            let v = contrast * v + noise * g.normal();
            out.push(v.clamp(-1.0, 1.0));
        }
    }
    out
}

/// Two Gaussian blobs centred at `+-separation / 2` along every axis with
/// standard deviation 0.25 per axis, split 5:1.
pub fn blobs(dim: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if dim == 0 || per_class < 6 {
        return Err(Error::Config(format!(
            "blobs need dim >= 1 and >= 6 samples per class, got {dim} and {per_class}"
        )));
    }
    let n_train = per_class * 5 / 6;
    let mut g = RngStream::new(seed, 0xB10B).generator();
    let mut train = Split::default();
    let mut test = Split::default();
    for k in 0..per_class {
        let split = if k < n_train { &mut train } else { &mut test };
        for class in 0..2 {
            let centre = if class == 0 { -separation / 2.0 } else { separation / 2.0 };
            for _ in 0..dim {
                split.features.push(centre + 0.25 * g.normal());
            }
            split.labels.push(class);
        }
    }
    Ok(Dataset {
        sample_shape: alloc::vec![dim],
        classes: 2,
        train,
        test,
    })
}
