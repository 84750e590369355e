//! Analog error model: reduced precision, clamp, Gaussian noise, the
//! error-probability calculus and the composed quantized-noise pipeline.

use core::f64::consts::SQRT_2;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::error::{Error, Result};
use crate::rng::{RngStream, Sampler};
use crate::tensor::Tensor;

pub const MAX_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Clamp,
    ReducePrecision,
    Noise,
}

pub const DEFAULT_STAGES: [Stage; 3] = [Stage::Clamp, Stage::ReducePrecision, Stage::Noise];

/// Quantized-noise configuration as written by a user: exactly one of
/// `sigma` or `ep` (target error probability) must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantNoiseSpec {
    pub bits: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep: Option<f64>,
    #[serde(default = "neg_one")]
    pub clamp_lo: f64,
    #[serde(default = "pos_one")]
    pub clamp_hi: f64,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
}

fn neg_one() -> f64 {
    -1.0
}

fn pos_one() -> f64 {
    1.0
}

fn default_stages() -> Vec<Stage> {
    DEFAULT_STAGES.to_vec()
}

impl QuantNoiseSpec {
    pub fn with_sigma(bits: u32, sigma: f64) -> Self {
        QuantNoiseSpec {
            bits,
            sigma: Some(sigma),
            ep: None,
            clamp_lo: -1.0,
            clamp_hi: 1.0,
            stages: default_stages(),
        }
    }

    pub fn with_ep(bits: u32, ep: f64) -> Self {
        QuantNoiseSpec {
            sigma: None,
            ep: Some(ep),
            ..Self::with_sigma(bits, 0.0)
        }
    }

    /// Validates and derives the missing member of the `sigma`/`ep` pair.
    pub fn resolve(&self) -> Result<ResolvedNoise> {
        if !(1..=MAX_BITS).contains(&self.bits) {
            return Err(Error::field(
                "bits",
                format!("{} is outside [1, {MAX_BITS}]", self.bits),
            ));
        }
        if !(self.clamp_lo < self.clamp_hi) {
            return Err(Error::field(
                "clamp_lo",
                format!("{} must be below clamp_hi {}", self.clamp_lo, self.clamp_hi),
            ));
        }
        if self.stages.is_empty() {
            return Err(Error::field("stages", "stage order is empty"));
        }
        let (sigma, ep) = match (self.sigma, self.ep) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::field("sigma", "set exactly one of `sigma` or `ep`"))
            }
            (Some(sigma), None) => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::field("sigma", format!("{sigma} must be >= 0")));
                }
                let ep = if sigma == 0.0 {
                    0.0
                } else {
                    error_probability(self.bits, sigma)?
                };
                (sigma, ep)
            }
            (None, Some(ep)) => {
                if !(0.0..1.0).contains(&ep) {
                    return Err(Error::field("ep", format!("{ep} is outside [0, 1)")));
                }
                let sigma = if ep == 0.0 {
                    0.0
                } else {
                    sigma_from_ep(self.bits, ep)?
                };
                (sigma, ep)
            }
        };
        Ok(ResolvedNoise {
            bits: self.bits,
            sigma,
            ep,
            clamp_lo: self.clamp_lo,
            clamp_hi: self.clamp_hi,
            stages: self.stages.clone(),
        })
    }
}

/// A [`QuantNoiseSpec`] with both `sigma` and `ep` populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedNoise {
    pub bits: u32,
    pub sigma: f64,
    pub ep: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub stages: Vec<Stage>,
}

impl ResolvedNoise {
    /// Noiseless pass-through except for clamp and `MAX_BITS` rounding.
    pub fn noiseless() -> Self {
        QuantNoiseSpec::with_sigma(MAX_BITS, 0.0)
            .resolve()
            .expect("static spec is valid")
    }

    pub fn has_clamp(&self) -> bool {
        self.stages.contains(&Stage::Clamp)
    }

    /// Applies the stages in order, drawing noise from `sampler`.
    pub fn apply_in_place(&self, data: &mut [f64], sampler: &mut Sampler) {
        let scale = grid_scale(self.bits);
        for stage in &self.stages {
            match stage {
                Stage::Clamp => {
                    for x in data.iter_mut() {
                        *x = x.clamp(self.clamp_lo, self.clamp_hi);
                    }
                }
                Stage::ReducePrecision => {
                    for x in data.iter_mut() {
                        *x = rp_scaled(*x, scale);
                    }
                }
                Stage::Noise => {
                    if self.sigma > 0.0 {
                        for x in data.iter_mut() {
                            *x += self.sigma * sampler.normal();
                        }
                    }
                }
            }
        }
    }
}

fn grid_scale(bits: u32) -> f64 {
    (1u64 << bits) as f64
}

fn rp_scaled(x: f64, p: f64) -> f64 {
    let q = libm::ceil((p * x).abs() - 0.5);
    if q <= 0.0 {
        0.0
    } else if x < 0.0 {
        -q / p
    } else {
        q / p
    }
}

/// Round-to-nearest onto the `2^-bits` grid:
/// `sign(x) * ceil(|2^bits x| - 0.5) / 2^bits`. Exact half steps round
/// toward zero.
pub fn reduce_precision_scalar(x: f64, bits: u32) -> f64 {
    rp_scaled(x, grid_scale(bits))
}

pub fn reduce_precision(x: &Tensor, bits: u32) -> Tensor {
    let p = grid_scale(bits);
    x.map(|v| rp_scaled(v, p))
}

pub fn clamp(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::Config(format!("clamp bounds {lo} >= {hi}")));
    }
    Ok(x.map(|v| v.clamp(lo, hi)))
}

/// `x + N(0, sigma^2)` per component; `sigma == 0` returns `x` unchanged.
pub fn gaussian_noise(x: &Tensor, sigma: f64, rng: RngStream) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::field("sigma", format!("{sigma} must be >= 0")));
    }
    let mut out = x.clone();
    if sigma > 0.0 {
        let mut g = rng.generator();
        for v in out.data_mut() {
            *v += sigma * g.normal();
        }
    }
    Ok(out)
}

/// Probability that Gaussian noise moves a `bits`-bit digital value to a
/// different level: `1 - erf(1 / (2 sqrt2 sigma (2^bits - 1)))`.
pub fn error_probability(bits: u32, sigma: f64) -> Result<f64> {
    if bits == 0 {
        return Err(Error::field("bits", "must be >= 1"));
    }
    if !(sigma > 0.0) {
        return Err(Error::field(
            "sigma",
            format!("{sigma} must be > 0 (error probability is singular at 0)"),
        ));
    }
    let levels = grid_scale(bits) - 1.0;
    Ok(1.0 - libm::erf(1.0 / (2.0 * SQRT_2 * sigma * levels)))
}

/// Inverse of [`error_probability`] in `sigma`, by bisection in log space.
pub fn sigma_from_ep(bits: u32, ep: f64) -> Result<f64> {
    if !(ep > 0.0 && ep < 1.0) {
        return Err(Error::field("ep", format!("{ep} is outside (0, 1)")));
    }
    let f = |sigma: f64| error_probability(bits, sigma).map(|p| p - ep);
    let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
    while f(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonFinite(format!("no sigma reaches ep={ep}")));
        }
    }
    while f(lo)? > 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NonFinite(format!("no sigma reaches ep={ep}")));
        }
    }
    for _ in 0..400 {
        let mid = libm::sqrt(lo * hi);
        let r = f(mid)?;
        if r.abs() <= 1e-14 {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(libm::sqrt(lo * hi))
}

/// Runs `x` through the configured stage order.
pub fn pipeline(x: &Tensor, spec: &ResolvedNoise, rng: RngStream) -> Result<Tensor> {
    if spec.stages.is_empty() {
        return Err(Error::field("stages", "stage order is empty"));
    }
    let mut out = x.clone();
    let mut g = rng.generator();
    spec.apply_in_place(out.data_mut(), &mut g);
    Ok(out)
}

/// `log2` of the number of distinct values the activation derivative takes
/// over the `2^-bits` input grid inside `[-window, window]`, after rounding
/// those derivative values onto the same grid.
pub fn effective_bit_precision(act: &ActivationSpec, bits: u32, window: f64) -> Result<f64> {
    if bits == 0 {
        return Err(Error::field("bits", "must be >= 1"));
    }
    if !(window > 0.0) {
        return Err(Error::field("window", "must be positive"));
    }
    Ok(libm::log2(distinct_derivative_levels(act, bits, window) as f64))
}

/// Distinct derivative levels behind [`effective_bit_precision`].
pub fn distinct_derivative_levels(act: &ActivationSpec, bits: u32, window: f64) -> usize {
    let p = grid_scale(bits);
    let k_max = libm::floor(window * p) as i64;
    let mut levels: Vec<f64> = (-k_max..=k_max)
        .map(|k| rp_scaled(act.derivative(k as f64 / p), p))
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels.len()
}
