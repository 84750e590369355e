use analog_grad_core::activations::ActivationSpec;
use analog_grad_core::quant::{
    clamp, effective_bit_precision, error_probability, gaussian_noise, pipeline, reduce_precision,
    reduce_precision_scalar, sigma_from_ep, QuantNoiseSpec,
};
use analog_grad_core::{RngStream, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn rp_is_idempotent_odd_and_half_step_accurate(x in -4.0f64..4.0, bits in 1u32..=12) {
        let r = reduce_precision_scalar(x, bits);
        prop_assert_eq!(reduce_precision_scalar(r, bits), r);
        prop_assert_eq!(reduce_precision_scalar(-x, bits), -r);
        prop_assert!((r - x).abs() <= 0.5f64.powi(bits as i32 + 1));
        // lands on the grid
        let scaled = r * 2f64.powi(bits as i32);
        prop_assert_eq!(scaled, scaled.round());
    }

    #[test]
    fn ep_and_sigma_round_trip(bits in 2u32..=8, ep in 0.01f64..0.99) {
        let sigma = sigma_from_ep(bits, ep).unwrap();
        prop_assert!((error_probability(bits, sigma).unwrap() - ep).abs() < 1e-9);
    }

    #[test]
    fn error_probability_increases_with_sigma(bits in 1u32..=10, a in 1e-4f64..1.0, b in 1e-4f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(error_probability(bits, lo).unwrap() <= error_probability(bits, hi).unwrap());
    }
}

#[test]
fn rp_examples() {
    assert_eq!(reduce_precision_scalar(0.3, 2), 0.25);
    assert_eq!(reduce_precision_scalar(-0.3, 2), -0.25);
    assert_eq!(reduce_precision_scalar(0.0, 8), 0.0);
    let t = reduce_precision(&Tensor::vector(&[0.1, 0.7, -0.9]), 1);
    assert_eq!(t.data(), &[0.0, 0.5, -1.0]);
}

#[test]
fn clamp_examples() {
    let t = clamp(&Tensor::vector(&[-3.0, 0.2, 5.0]), -1.0, 1.0).unwrap();
    assert_eq!(t.data(), &[-1.0, 0.2, 1.0]);
    assert!(clamp(&Tensor::vector(&[0.0]), 1.0, -1.0).is_err());
}

#[test]
fn gaussian_noise_moments() {
    let n = 200_000;
    let x = Tensor::zeros(&[n]);
    let y = gaussian_noise(&x, 0.1, RngStream::new(3, 0)).unwrap();
    let mean = y.data().iter().sum::<f64>() / n as f64;
    let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // five standard errors of the mean and of the standard deviation
    assert!(mean.abs() < 5.0 * 0.1 / (n as f64).sqrt(), "mean {mean}");
    assert!((var.sqrt() - 0.1).abs() < 5.0 * 0.1 / (2.0 * n as f64).sqrt(), "std {}", var.sqrt());

    let z = gaussian_noise(&Tensor::vector(&[0.25, -0.5]), 0.0, RngStream::new(3, 0)).unwrap();
    assert_eq!(z.data(), &[0.25, -0.5]);
    assert!(gaussian_noise(&x, -1.0, RngStream::new(3, 0)).is_err());
}

#[test]
fn noise_is_reproducible_per_stream() {
    let x = Tensor::zeros(&[64]);
    let a = gaussian_noise(&x, 1.0, RngStream::new(8, 1)).unwrap();
    assert_eq!(a, gaussian_noise(&x, 1.0, RngStream::new(8, 1)).unwrap());
    assert_ne!(a, gaussian_noise(&x, 1.0, RngStream::new(8, 2)).unwrap());
}

#[test]
fn error_probability_examples() {
    let sigma = sigma_from_ep(4, 0.5).unwrap();
    assert!((sigma - 0.0494).abs() < 5e-4, "sigma {sigma}");
    assert!(error_probability(0, 0.1).is_err());
    assert!(error_probability(4, 0.0).is_err());
    assert!(sigma_from_ep(4, 0.0).is_err());
    assert!(sigma_from_ep(4, 1.0).is_err());
}

/// Fraction of interior levels that move after noise and re-quantization
/// onto the `2^bits - 1` step grid.
fn monte_carlo_ep(bits: u32, sigma: f64, trials: usize, stream: u64) -> f64 {
    let levels = ((1u64 << bits) - 1) as f64;
    let mut g = RngStream::new(17, stream).generator();
    let mut moved = 0usize;
    for _ in 0..trials {
        let k = 1.0 + g.below(levels as usize - 1) as f64;
        let v = k / levels + sigma * g.normal();
        if (v * levels).round() != k {
            moved += 1;
        }
    }
    moved as f64 / trials as f64
}

#[test]
fn monte_carlo_matches_error_probability() {
    for (k, (bits, ep)) in [(2, 0.2), (4, 0.5), (8, 0.8)].into_iter().enumerate() {
        let sigma = sigma_from_ep(bits, ep).unwrap();
        let mc = monte_carlo_ep(bits, sigma, 100_000, k as u64);
        assert!((mc - ep).abs() < 0.01, "bits {bits} ep {ep}: {mc}");
    }
}

#[test]
fn pipeline_examples() {
    let fine = QuantNoiseSpec::with_sigma(16, 0.0).resolve().unwrap();
    let x = Tensor::vector(&[0.123456789, -0.7, 0.999]);
    let once = pipeline(&x, &fine, RngStream::new(0, 0)).unwrap();
    for (a, b) in once.data().iter().zip(x.data()) {
        assert!((a - b).abs() <= 2f64.powi(-17));
    }
    assert_eq!(pipeline(&once, &fine, RngStream::new(0, 1)).unwrap(), once);

    let coarse = QuantNoiseSpec::with_sigma(2, 0.0).resolve().unwrap();
    let out = pipeline(&Tensor::vector(&[0.3, 1.7, -0.6]), &coarse, RngStream::new(0, 0)).unwrap();
    assert_eq!(out.data(), &[0.25, 1.0, -0.5]);

    let empty = QuantNoiseSpec {
        stages: vec![],
        ..QuantNoiseSpec::with_sigma(2, 0.0)
    };
    assert!(empty.resolve().is_err());
}

#[test]
fn pipeline_level_changes_on_the_rounding_grid() {
    // re-quantizing 0.25 after noise leaves its 2^-2 cell with probability
    // 1 - erf(2^-2 / (2 sqrt2 sigma)); the cell is narrower than the one
    // behind error_probability, so the rate exceeds the nominal 0.5
    let spec = QuantNoiseSpec::with_ep(2, 0.5).resolve().unwrap();
    let n = 200_000;
    let y = pipeline(&Tensor::full(&[n], 0.25), &spec, RngStream::new(4, 0)).unwrap();
    let moved = y
        .data()
        .iter()
        .filter(|&&v| reduce_precision_scalar(v, 2) != 0.25)
        .count() as f64
        / n as f64;
    let expected = 1.0 - erf_simpson(0.25 / (2.0 * std::f64::consts::SQRT_2 * spec.sigma));
    assert!((moved - expected).abs() < 0.01, "{moved} vs {expected}");
    assert!((expected - 0.6128).abs() < 1e-3);
}

fn erf_simpson(x: f64) -> f64 {
    // composite Simpson on the density, independent of the library erf
    let steps = 20_000;
    let h = x / steps as f64;
    let f = |t: f64| (-t * t).exp();
    let mut acc = f(0.0) + f(x);
    for k in 1..steps {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    acc * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn spec_validation() {
    assert!(QuantNoiseSpec::with_sigma(0, 0.1).resolve().is_err());
    assert!(QuantNoiseSpec::with_sigma(17, 0.1).resolve().is_err());
    assert!(QuantNoiseSpec::with_sigma(4, -0.1).resolve().is_err());
    assert!(QuantNoiseSpec::with_ep(4, 1.0).resolve().is_err());
    let both = QuantNoiseSpec {
        ep: Some(0.5),
        ..QuantNoiseSpec::with_sigma(4, 0.1)
    };
    assert!(both.resolve().is_err());
    let r = QuantNoiseSpec::with_sigma(4, 0.05).resolve().unwrap();
    assert!((r.ep - error_probability(4, 0.05).unwrap()).abs() < 1e-15);
}

#[test]
fn effective_bit_precision_examples() {
    assert_eq!(effective_bit_precision(&ActivationSpec::identity(), 6, 0.25).unwrap(), 0.0);
    assert_eq!(effective_bit_precision(&ActivationSpec::relu(), 6, 1.0).unwrap(), 1.0);
    assert!(effective_bit_precision(&ActivationSpec::relu(), 0, 1.0).is_err());
    assert!(effective_bit_precision(&ActivationSpec::relu(), 6, 0.0).is_err());

    // steeper GELU, fewer distinct derivative levels over the normalized range
    let ebp: Vec<f64> = [1.0, 2.0, 3.0, 5.0, 10.0]
        .iter()
        .map(|&s| effective_bit_precision(&ActivationSpec::scaled_gelu(s), 6, 1.0).unwrap())
        .collect();
    assert!(ebp.windows(2).all(|w| w[0] > w[1]), "{ebp:?}");
}

#[test]
fn effective_bit_precision_is_monotone_in_bits() {
    for s in [1.0, 3.0, 10.0] {
        let spec = ActivationSpec::scaled_gelu(s);
        let mut prev = 0.0;
        for bits in 1..=10 {
            let v = effective_bit_precision(&spec, bits, 0.5).unwrap();
            assert!(v >= prev, "s {s} bits {bits}: {v} < {prev}");
            prev = v;
        }
    }
}
