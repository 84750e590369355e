//! Activation zoo: rectified, smooth, scaled and interpolated units, their
//! closed-form derivatives, gated (GLU) variants and the gradient step
//! discontinuity metric.
//!
//! Interpolated kinds blend a rectified base with a smooth target as
//! `(1 - i) * relu + i * target`, algebraically the same as
//! `relu + i * (target - relu)` but exact at both endpoints, so `i = 0`
//! reproduces ReLU and `i = 1` the target bit for bit.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    Gelu,
    Silu,
    ScaledGelu,
    InterpReluGelu,
    InterpReluSilu,
    Reglu,
    Geglu,
    InterpRegluGeglu,
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 11] = [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Gelu,
        ActivationKind::Silu,
        ActivationKind::ScaledGelu,
        ActivationKind::InterpReluGelu,
        ActivationKind::InterpReluSilu,
        ActivationKind::Reglu,
        ActivationKind::Geglu,
        ActivationKind::InterpRegluGeglu,
        ActivationKind::Identity,
    ];

    pub fn is_glu(self) -> bool {
        matches!(
            self,
            ActivationKind::Reglu | ActivationKind::Geglu | ActivationKind::InterpRegluGeglu
        )
    }

    pub fn is_interp(self) -> bool {
        matches!(
            self,
            ActivationKind::InterpReluGelu
                | ActivationKind::InterpReluSilu
                | ActivationKind::InterpRegluGeglu
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky-relu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Silu => "silu",
            ActivationKind::ScaledGelu => "scaled-gelu",
            ActivationKind::InterpReluGelu => "interp-relu-gelu",
            ActivationKind::InterpReluSilu => "interp-relu-silu",
            ActivationKind::Reglu => "reglu",
            ActivationKind::Geglu => "geglu",
            ActivationKind::InterpRegluGeglu => "interp-reglu-geglu",
            ActivationKind::Identity => "identity",
        }
    }
}

/// Parameterised activation.
///
/// `s` only affects `scaled-gelu`, `i` only the interpolated kinds and
/// `alpha` only `leaky-relu`; the other fields are carried but ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default)]
    pub i: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.01
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        ActivationSpec {
            kind,
            s: 1.0,
            i: 0.0,
            alpha: default_alpha(),
        }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn gelu() -> Self {
        Self::new(ActivationKind::Gelu)
    }

    pub fn silu() -> Self {
        Self::new(ActivationKind::Silu)
    }

    pub fn identity() -> Self {
        Self::new(ActivationKind::Identity)
    }

    pub fn leaky_relu(alpha: f64) -> Self {
        ActivationSpec {
            alpha,
            ..Self::new(ActivationKind::LeakyRelu)
        }
    }

    pub fn scaled_gelu(s: f64) -> Self {
        ActivationSpec {
            s,
            ..Self::new(ActivationKind::ScaledGelu)
        }
    }

    pub fn interp_gelu(i: f64) -> Self {
        ActivationSpec {
            i,
            ..Self::new(ActivationKind::InterpReluGelu)
        }
    }

    pub fn interp_silu(i: f64) -> Self {
        ActivationSpec {
            i,
            ..Self::new(ActivationKind::InterpReluSilu)
        }
    }

    pub fn reglu() -> Self {
        Self::new(ActivationKind::Reglu)
    }

    pub fn geglu() -> Self {
        Self::new(ActivationKind::Geglu)
    }

    pub fn interp_glu(i: f64) -> Self {
        ActivationSpec {
            i,
            ..Self::new(ActivationKind::InterpRegluGeglu)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i >= 0.0 && self.i <= 1.0) {
            return Err(Error::field("i", format!("{} is outside [0, 1]", self.i)));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::field("s", format!("{} must be positive", self.s)));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::field("alpha", format!("{} is outside [0, 1)", self.alpha)));
        }
        Ok(())
    }

    /// Scalar value of an elementwise kind. GLU kinds evaluate their gate
    /// nonlinearity here.
    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu | ActivationKind::Reglu => relu(x),
            ActivationKind::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    self.alpha * x
                }
            }
            ActivationKind::Gelu | ActivationKind::Geglu => gelu(x, 1.0),
            ActivationKind::ScaledGelu => gelu(x, self.s),
            ActivationKind::Silu => silu(x),
            ActivationKind::InterpReluGelu | ActivationKind::InterpRegluGeglu => {
                (1.0 - self.i) * relu(x) + self.i * gelu(x, 1.0)
            }
            ActivationKind::InterpReluSilu => (1.0 - self.i) * relu(x) + self.i * silu(x),
            ActivationKind::Identity => x,
        }
    }

    /// Scalar derivative. Kinks take the `x <= 0` branch.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu | ActivationKind::Reglu => relu_prime(x),
            ActivationKind::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    self.alpha
                }
            }
            ActivationKind::Gelu | ActivationKind::Geglu => gelu_prime(x, 1.0),
            ActivationKind::ScaledGelu => gelu_prime(x, self.s),
            ActivationKind::Silu => silu_prime(x),
            ActivationKind::InterpReluGelu | ActivationKind::InterpRegluGeglu => {
                (1.0 - self.i) * relu_prime(x) + self.i * gelu_prime(x, 1.0)
            }
            ActivationKind::InterpReluSilu => {
                (1.0 - self.i) * relu_prime(x) + self.i * silu_prime(x)
            }
            ActivationKind::Identity => 1.0,
        }
    }

    /// Points where the derivative may jump.
    pub fn kinks(&self) -> &'static [f64] {
        match self.kind {
            ActivationKind::Relu
            | ActivationKind::Reglu
            | ActivationKind::LeakyRelu
            | ActivationKind::InterpReluGelu
            | ActivationKind::InterpReluSilu
            | ActivationKind::InterpRegluGeglu => &[0.0],
            _ => &[],
        }
    }

    fn elementwise(&self) -> Result<()> {
        if self.kind.is_glu() {
            return Err(Error::Config(format!(
                "`{}` is a gated unit; evaluate it with glu_eval",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Standard normal CDF evaluated at `z`.
fn phi_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

fn phi_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * PI)
}

/// `x * Phi(s x)`, i.e. `x/2 * (1 + erf(s x / sqrt 2))`; `s = 1` is plain GELU.
pub fn gelu(x: f64, s: f64) -> f64 {
    x * phi_cdf(s * x)
}

pub fn gelu_prime(x: f64, s: f64) -> f64 {
    let z = s * x;
    phi_cdf(z) + z * phi_pdf(z)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `(1 + e^-x + x e^-x) / (1 + e^-x)^2`, written as `sig + x sig (1 - sig)`
/// so large negative inputs do not overflow.
pub fn silu_prime(x: f64) -> f64 {
    let sg = sigmoid(x);
    sg + x * sg * (1.0 - sg)
}

pub fn act_eval(spec: &ActivationSpec, x: &Tensor) -> Result<Tensor> {
    spec.elementwise()?;
    Ok(x.map(|v| spec.value(v)))
}

pub fn act_derivative(spec: &ActivationSpec, x: &Tensor) -> Result<Tensor> {
    spec.elementwise()?;
    Ok(x.map(|v| spec.derivative(v)))
}

/// Weights and biases of a gated linear unit: gate branch `x W + b`, linear
/// branch `x V + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluParams {
    pub w: Tensor,
    pub v: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

impl GluParams {
    pub fn new(w: Tensor, v: Tensor, b: Tensor, c: Tensor) -> Result<Self> {
        let params = GluParams { w, v, b, c };
        params.check()?;
        Ok(params)
    }

    fn check(&self) -> Result<()> {
        let glu_err = |detail| {
            Err(Error::ShapeMismatch {
                node: "glu".into(),
                detail,
            })
        };
        if self.w.rank() != 2 || self.w.shape() != self.v.shape() {
            return glu_err(format!(
                "W {:?} and V {:?} must be identical matrices",
                self.w.shape(),
                self.v.shape()
            ));
        }
        let out = self.w.shape()[1];
        if self.b.numel() != out || self.c.numel() != out {
            return glu_err(format!(
                "biases {:?} / {:?} must have {out} entries",
                self.b.shape(),
                self.c.shape()
            ));
        }
        Ok(())
    }
}

/// `gate(x W + b) * (x V + c)` for `x` of shape `[n, d_in]` (or `[d_in]`).
pub fn glu_eval(spec: &ActivationSpec, x: &Tensor, params: &GluParams) -> Result<Tensor> {
    if !spec.kind.is_glu() {
        return Err(Error::Config(format!(
            "`{}` is not a gated unit",
            spec.kind.name()
        )));
    }
    params.check()?;
    let (d_in, d_out) = (params.w.shape()[0], params.w.shape()[1]);
    let rows = match x.shape() {
        [d] if *d == d_in => 1,
        [n, d] if *d == d_in => *n,
        other => {
            return Err(Error::ShapeMismatch {
                node: "glu".into(),
                detail: format!("input {other:?} does not match W rows {d_in}"),
            })
        }
    };
    let (w, v) = (params.w.data(), params.v.data());
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let xr = &x.data()[r * d_in..(r + 1) * d_in];
        for j in 0..d_out {
            let mut gate = params.b.data()[j];
            let mut lin = params.c.data()[j];
            for (k, &xv) in xr.iter().enumerate() {
                gate += xv * w[k * d_out + j];
                lin += xv * v[k * d_out + j];
            }
            out[r * d_out + j] = spec.value(gate) * lin;
        }
    }
    let shape = if x.rank() == 1 {
        vec![d_out]
    } else {
        vec![rows, d_out]
    };
    Tensor::new(shape, out)
}

/// Gradient step discontinuity `|f'(x0-) - f'(x0+)|`.
///
/// One-sided limits are estimated from the closed-form derivative at
/// `x0 -/+ h`, halving `h` from `eps` until both sides move by less than
/// `1e-9`.
pub fn gsd(spec: &ActivationSpec, x0: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::field("eps", "must be positive"));
    }
    let one_sided = |h: f64| (spec.derivative(x0 - h), spec.derivative(x0 + h));
    let mut h = eps;
    let (mut left, mut right) = one_sided(h);
    for _ in 0..200 {
        let next_h = h * 0.5;
        if x0 - next_h == x0 || x0 + next_h == x0 {
            break;
        }
        let (l, r) = one_sided(next_h);
        let settled = (l - left).abs() < 1e-9 && (r - right).abs() < 1e-9;
        left = l;
        right = r;
        h = next_h;
        if settled {
            break;
        }
    }
    if !(left.is_finite() && right.is_finite()) {
        return Err(Error::NonFinite(format!(
            "derivative of {} near {x0}",
            spec.kind.name()
        )));
    }
    Ok((left - right).abs())
}

/// `gsd` at each point of `xs`, as `(x0, gsd)` pairs.
pub fn gsd_profile(spec: &ActivationSpec, xs: &[f64], eps: f64) -> Result<Vec<(f64, f64)>> {
    xs.iter().map(|&x| Ok((x, gsd(spec, x, eps)?))).collect()
}
