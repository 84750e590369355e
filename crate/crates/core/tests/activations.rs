use analog_grad_core::activations::{
    act_derivative, act_eval, gelu, glu_eval, gsd, gsd_profile, relu, silu, ActivationKind, ActivationSpec,
    GluParams,
};
use analog_grad_core::Tensor;
use proptest::prelude::*;

/// Standard normal CDF from a Simpson integral of the density.
fn phi(z: f64) -> f64 {
    let steps = 4000;
    let h = z / steps as f64;
    let f = |t: f64| (-0.5 * t * t).exp();
    let mut acc = f(0.0) + f(z);
    for k in 1..steps {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    0.5 + acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn value_examples() {
    assert_eq!(relu(-0.5), 0.0);
    assert_eq!(relu(0.7), 0.7);
    for x in [-2.0, -0.5, 0.0, 0.3, 1.0, 2.5] {
        assert!((gelu(x, 1.0) - x * phi(x)).abs() < 1e-10, "gelu({x})");
        assert!((silu(x) - x / (1.0 + (-x).exp())).abs() < 1e-14, "silu({x})");
    }
    assert!((gelu(1.0, 1.0) - 0.8413447460685429).abs() < 1e-12);
    let out = act_eval(&ActivationSpec::leaky_relu(0.1), &Tensor::vector(&[-2.0, 3.0])).unwrap();
    assert_eq!(out.data(), &[-0.2, 3.0]);
}

#[test]
fn derivatives_match_central_differences() {
    let specs = [
        ActivationSpec::gelu(),
        ActivationSpec::silu(),
        ActivationSpec::scaled_gelu(4.0),
        ActivationSpec::interp_gelu(0.4),
        ActivationSpec::interp_silu(0.8),
        ActivationSpec::leaky_relu(0.2),
    ];
    let h = 1e-6;
    for spec in specs {
        for k in 0..=80 {
            let x = -4.0 + 0.1 * k as f64 + 0.0123;
            let numeric = (spec.value(x + h) - spec.value(x - h)) / (2.0 * h);
            let d = spec.derivative(x);
            assert!((d - numeric).abs() <= 1e-6 * d.abs().max(1.0), "{} at {x}", spec.kind.name());
        }
    }
}

#[test]
fn interpolation_endpoints_are_exact() {
    let xs: Vec<f64> = (0..100_000).map(|k| -5.0 + 1e-4 * k as f64).collect();
    let x = Tensor::vector(&xs);
    let at0 = act_eval(&ActivationSpec::interp_gelu(0.0), &x).unwrap();
    let at1 = act_eval(&ActivationSpec::interp_gelu(1.0), &x).unwrap();
    assert_eq!(at0, act_eval(&ActivationSpec::relu(), &x).unwrap());
    assert_eq!(at1, act_eval(&ActivationSpec::gelu(), &x).unwrap());
    let s0 = act_eval(&ActivationSpec::interp_silu(0.0), &x).unwrap();
    let s1 = act_eval(&ActivationSpec::interp_silu(1.0), &x).unwrap();
    assert_eq!(s0, at0);
    assert_eq!(s1, act_eval(&ActivationSpec::silu(), &x).unwrap());
    let d0 = act_derivative(&ActivationSpec::interp_gelu(0.0), &x).unwrap();
    assert_eq!(d0, act_derivative(&ActivationSpec::relu(), &x).unwrap());
}

#[test]
fn gsd_examples() {
    let eps = 1e-3;
    assert!((gsd(&ActivationSpec::relu(), 0.0, eps).unwrap() - 1.0).abs() < 1e-6);
    assert!(gsd(&ActivationSpec::gelu(), 0.0, eps).unwrap() < 1e-6);
    assert!(gsd(&ActivationSpec::silu(), 0.0, eps).unwrap() < 1e-6);
    for k in 0..=10 {
        let i = k as f64 / 10.0;
        let g = gsd(&ActivationSpec::interp_gelu(i), 0.0, eps).unwrap();
        assert!((g - (1.0 - i)).abs() < 1e-6, "i {i}: {g}");
    }
    for alpha in [0.0, 0.01, 0.3, 0.9] {
        let g = gsd(&ActivationSpec::leaky_relu(alpha), 0.0, eps).unwrap();
        assert!((g - (1.0 - alpha)).abs() < 1e-6);
    }
    // away from the kink ReLU is smooth
    assert!(gsd(&ActivationSpec::relu(), 0.5, eps).unwrap() < 1e-9);
    assert!(gsd(&ActivationSpec::relu(), 0.0, 0.0).is_err());
    let profile = gsd_profile(&ActivationSpec::relu(), &[-1.0, 0.0, 1.0], eps).unwrap();
    assert_eq!(profile.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
}

#[test]
fn scaled_gelu_approaches_relu() {
    let xs = [-1.0, -0.2, -0.05, 0.05, 0.2, 1.0];
    let err = |s: f64| {
        xs.iter()
            .map(|&x| (gelu(x, s) - relu(x)).abs())
            .fold(0.0, f64::max)
    };
    assert!(err(100.0) < err(10.0) && err(10.0) < err(1.0));
    assert!(err(1000.0) < 1e-6);
    assert_eq!(ActivationSpec::scaled_gelu(1.0).value(0.7), ActivationSpec::gelu().value(0.7));
}

#[test]
fn validation() {
    assert!(ActivationSpec::interp_gelu(1.5).validate().is_err());
    assert!(ActivationSpec::interp_gelu(-0.1).validate().is_err());
    assert!(ActivationSpec::scaled_gelu(0.0).validate().is_err());
    assert!(ActivationSpec::leaky_relu(1.0).validate().is_err());
    assert!(ActivationSpec::interp_gelu(1.0).validate().is_ok());
    assert!(act_eval(&ActivationSpec::geglu(), &Tensor::vector(&[1.0])).is_err());
}

fn glu_params(w: &[f64], v: &[f64], b: &[f64], c: &[f64], d_in: usize) -> GluParams {
    let d_out = b.len();
    GluParams::new(
        Tensor::new(vec![d_in, d_out], w.to_vec()).unwrap(),
        Tensor::new(vec![d_in, d_out], v.to_vec()).unwrap(),
        Tensor::vector(b),
        Tensor::vector(c),
    )
    .unwrap()
}

#[test]
fn glu_examples() {
    let p = glu_params(&[1.0, -1.0], &[2.0, 0.5], &[0.0], &[1.0], 2);
    let x = Tensor::vector(&[0.5, 0.25]);
    // gate 0.25, linear 2.125
    let reglu = glu_eval(&ActivationSpec::reglu(), &x, &p).unwrap();
    assert!((reglu.data()[0] - 0.25 * 2.125).abs() < 1e-15);
    let geglu = glu_eval(&ActivationSpec::geglu(), &x, &p).unwrap();
    assert!((geglu.data()[0] - 0.25 * phi(0.25) * 2.125).abs() < 1e-10);
    // negative gate closes ReGLU
    let closed = glu_eval(&ActivationSpec::reglu(), &Tensor::vector(&[-0.5, 0.25]), &p).unwrap();
    assert_eq!(closed.data()[0], 0.0);
    let mid = glu_eval(&ActivationSpec::interp_glu(0.5), &x, &p).unwrap();
    assert!((mid.data()[0] - 0.5 * (reglu.data()[0] + geglu.data()[0])).abs() < 1e-15);

    let batch = Tensor::new(vec![2, 2], vec![0.5, 0.25, -0.5, 0.25]).unwrap();
    let out = glu_eval(&ActivationSpec::reglu(), &batch, &p).unwrap();
    assert_eq!(out.shape(), &[2, 1]);
    assert!(glu_eval(&ActivationSpec::relu(), &x, &p).is_err());
    assert!(glu_eval(&ActivationSpec::reglu(), &Tensor::vector(&[1.0]), &p).is_err());
    assert!(GluParams::new(
        Tensor::zeros(&[2, 1]),
        Tensor::zeros(&[1, 2]),
        Tensor::zeros(&[1]),
        Tensor::zeros(&[1])
    )
    .is_err());
}

#[test]
fn activation_kinds_round_trip_by_name() {
    for kind in [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Gelu,
        ActivationKind::ScaledGelu,
        ActivationKind::Silu,
        ActivationKind::InterpReluGelu,
        ActivationKind::InterpReluSilu,
        ActivationKind::Identity,
    ] {
        assert!(!kind.is_glu());
        assert!(!kind.name().is_empty());
    }
    assert!(ActivationKind::Geglu.is_glu());
}

proptest! {
    #[test]
    fn gelu_stays_between_min_and_relu(x in -8.0f64..8.0) {
        let g = gelu(x, 1.0);
        prop_assert!(g <= relu(x) + 1e-15);
        prop_assert!(g >= -0.17);
    }

    #[test]
    fn interpolation_is_affine_in_i(x in -3.0f64..3.0, i in 0.0f64..=1.0) {
        let v = ActivationSpec::interp_gelu(i).value(x);
        let expected = (1.0 - i) * relu(x) + i * gelu(x, 1.0);
        prop_assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn gsd_is_linear_in_interpolation(i in 0.0f64..=1.0) {
        let g = gsd(&ActivationSpec::interp_gelu(i), 0.0, 1e-3).unwrap();
        prop_assert!((g - (1.0 - i)).abs() < 1e-6);
    }
}
