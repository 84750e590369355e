//! Error propagation through a noisy quantized product into an activation
//! derivative: single products, gradient-error surfaces over an
//! input/weight grid, and mini-batch accumulated derivative errors.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, ActivationSpec};
use crate::error::{Error, Result};
use crate::quant::{reduce_precision_scalar, sigma_from_ep};
use crate::rng::{RngStream, Sampler};

/// How noise enters the product of a quantized input and weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProductMode {
    /// One Gaussian `eps` in the combined form
    /// `sign(xi xw) qi qw / p^2 + (eps / p) sqrt(qi^2 + qw^2) + eps^2`
    /// with `p = 2^bits` and `q = ceil(|x p| - 0.5)`.
    #[default]
    ClosedForm,
    /// Independent noise on each quantized operand, then multiply.
    Direct,
}

fn level(x: f64, p: f64) -> f64 {
    libm::ceil((x * p).abs() - 0.5).max(0.0)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Activation input after a no-bias linear layer whose input and weight are
/// both quantized and noisy. Draws fresh noise from `sampler`.
pub fn noisy_product_with(
    x_i: f64,
    x_w: f64,
    bits: u32,
    sigma: f64,
    mode: ProductMode,
    sampler: &mut Sampler,
) -> f64 {
    match mode {
        ProductMode::ClosedForm => {
            let p = (1u64 << bits) as f64;
            let (qi, qw) = (level(x_i, p), level(x_w, p));
            let signal = sign(x_i * x_w) * qi * qw / (p * p);
            if sigma == 0.0 {
                return signal;
            }
            let eps = sigma * sampler.normal();
            signal + eps / p * libm::sqrt(qi * qi + qw * qw) + eps * eps
        }
        ProductMode::Direct => {
            let a = reduce_precision_scalar(x_i, bits);
            let b = reduce_precision_scalar(x_w, bits);
            if sigma == 0.0 {
                return a * b;
            }
            let ea = sigma * sampler.normal();
            let eb = sigma * sampler.normal();
            (a + ea) * (b + eb)
        }
    }
}

/// Closed-form noisy product for one draw from `rng`.
pub fn noisy_product(x_i: f64, x_w: f64, bits: u32, sigma: f64, rng: RngStream) -> f64 {
    noisy_product_with(x_i, x_w, bits, sigma, ProductMode::ClosedForm, &mut rng.generator())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeta {
    pub activation: ActivationSpec,
    pub bits: u32,
    pub ep: f64,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub stream: u64,
    pub mode: ProductMode,
    /// Per-cell statistic; always mean absolute deviation of the derivative.
    pub statistic: String,
}

/// Mean absolute derivative error on an `(x_i, x_w)` grid. `values` is
/// row-major with one row per `x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSurface {
    pub xi_grid: Vec<f64>,
    pub xw_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: SurfaceMeta,
}

impl ErrorSurface {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.xw_grid.len() + j]
    }

    /// `(x_i, x_w, value)` for every cell, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let cols = self.xw_grid.len();
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.xi_grid[k / cols], self.xw_grid[k % cols], v))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Mean over cells with `|x_i x_w| < threshold`, or `None` if there are
    /// no such cells.
    pub fn near_zero_mean(&self, threshold: f64) -> Option<f64> {
        let (sum, count) = self
            .cells()
            .filter(|(a, b, _)| (a * b).abs() < threshold)
            .fold((0.0, 0usize), |(s, c), (_, _, v)| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    /// Mean over cells with `|x_i x_w| >= threshold`.
    pub fn far_mean(&self, threshold: f64) -> Option<f64> {
        let (sum, count) = self
            .cells()
            .filter(|(a, b, _)| (a * b).abs() >= threshold)
            .fold((0.0, 0usize), |(s, c), (_, _, v)| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn gradient_error_surface(
    spec: &ActivationSpec,
    bits: u32,
    ep: f64,
    grid: &[f64],
    trials: usize,
    rng: RngStream,
) -> Result<ErrorSurface> {
    gradient_error_surface_with(spec, bits, ep, grid, trials, rng, ProductMode::ClosedForm)
}

/// For each cell, the mean over `trials` of
/// `|f'(noisy_product(x_i, x_w)) - f'(x_i x_w)|`. Cell `k` (row-major) draws
/// from stream `rng.child(k)`, so cells are independent and reproducible.
pub fn gradient_error_surface_with(
    spec: &ActivationSpec,
    bits: u32,
    ep: f64,
    grid: &[f64],
    trials: usize,
    rng: RngStream,
    mode: ProductMode,
) -> Result<ErrorSurface> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::field("trials", "must be >= 1"));
    }
    if grid.is_empty() || grid.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::field("grid", "must be a nonempty subset of [-1, 1]"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::field("grid", "must be strictly ascending"));
    }
    if !(1..=crate::quant::MAX_BITS).contains(&bits) {
        return Err(Error::field("bits", format!("{bits} is outside [1, 16]")));
    }
    let sigma = sigma_from_ep(bits, ep)?;
    let mut values = Vec::with_capacity(grid.len() * grid.len());
    for (a, &x_i) in grid.iter().enumerate() {
        for (b, &x_w) in grid.iter().enumerate() {
            let cell = (a * grid.len() + b) as u64;
            let mut g = rng.child(cell).generator();
            let truth = spec.derivative(x_i * x_w);
            let mut total = 0.0;
            for _ in 0..trials {
                let z = noisy_product_with(x_i, x_w, bits, sigma, mode, &mut g);
                total += (spec.derivative(z) - truth).abs();
            }
            values.push(total / trials as f64);
        }
    }
    Ok(ErrorSurface {
        xi_grid: grid.to_vec(),
        xw_grid: grid.to_vec(),
        values,
        meta: SurfaceMeta {
            activation: *spec,
            bits,
            ep,
            sigma,
            trials,
            seed: rng.seed,
            stream: rng.stream,
            mode,
            statistic: "mean-absolute-deviation".into(),
        },
    })
}

/// One surface per interpolation factor between ReLU and the smooth target
/// of `kind` (`interp-relu-gelu` or `interp-relu-silu`), all drawn from the
/// same noise.
pub fn interpolation_error_sweep(
    kind: ActivationKind,
    bits: u32,
    ep: f64,
    i_values: &[f64],
    grid: &[f64],
    trials: usize,
    rng: RngStream,
) -> Result<Vec<ErrorSurface>> {
    if !matches!(kind, ActivationKind::InterpReluGelu | ActivationKind::InterpReluSilu) {
        return Err(Error::field(
            "activation.kind",
            format!("`{}` is not an elementwise interpolation", kind.name()),
        ));
    }
    i_values
        .iter()
        .map(|&i| {
            let spec = ActivationSpec {
                i,
                ..ActivationSpec::new(kind)
            };
            gradient_error_surface(&spec, bits, ep, grid, trials, rng)
        })
        .collect()
}

/// Empirical mini-batch mean of the activation derivative under input
/// noise, next to the true derivative at `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumRecord {
    pub activation: ActivationSpec,
    pub x: f64,
    pub n: usize,
    pub sigma: f64,
    /// `sum_i f'(x + eps_i) / n`.
    pub mean: f64,
    /// `f'(x)` (one-sided when `x` sits just off a kink).
    pub reference: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
}

impl AccumRecord {
    pub fn deviation(&self) -> f64 {
        (self.mean - self.reference).abs()
    }
}

pub fn accumulated_error(
    spec: &ActivationSpec,
    x: f64,
    n: usize,
    sigma: f64,
    rng: RngStream,
) -> Result<AccumRecord> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::field("n", "must be >= 1"));
    }
    if !(sigma > 0.0) {
        return Err(Error::field("sigma", "must be > 0"));
    }
    let mut g = rng.generator();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let d = spec.derivative(x + sigma * g.normal());
        sum += d;
        sum_sq += d * d;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(AccumRecord {
        activation: *spec,
        x,
        n,
        sigma,
        mean,
        reference: spec.derivative(x),
        std_error: libm::sqrt(var / n as f64),
    })
}
