use ntk_spectra::activation::{hermite_stats_fn, Table, DEFAULT_ORDER};
use ntk_spectra::{hermite_stats, Activation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Composite Simpson rule for `E f(Z)` on [-12, 12], splitting at `cut`.
fn simpson_expect(f: impl Fn(f64) -> f64, cut: f64) -> f64 {
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let piece = |a: f64, b: f64| {
        let n = 20000;
        let h = (b - a) / n as f64;
        let mut s = f(a) * pdf(a) + f(b) * pdf(b);
        for k in 1..n {
            let x = a + k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x) * pdf(x);
        }
        s * h / 3.0
    };
    piece(-12.0, cut) + piece(cut, 12.0)
}

#[test]
fn neg_part_closed_form_fast() {
    let start = std::time::Instant::now();
    let s = hermite_stats(&Activation::NegPart, DEFAULT_ORDER).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert!((s.c + 1.0 / (2.0 * PI).sqrt()).abs() < 1e-10);
    assert!((s.alpha - 0.5).abs() < 1e-10);
    assert!((s.beta_sq - (0.25 - 1.0 / (2.0 * PI))).abs() < 1e-10);
}

#[test]
fn identity_and_abs_closed_forms() {
    let s = hermite_stats(&Activation::Identity, DEFAULT_ORDER).unwrap();
    assert!(s.c.abs() < 1e-12 && (s.alpha - 1.0).abs() < 1e-12 && s.beta_sq < 1e-12);
    // E|Z| = √(2/π), E Z|Z| = 0, Var|Z| = 1 - 2/π.
    let s = hermite_stats(&Activation::Abs, DEFAULT_ORDER).unwrap();
    assert!((s.c - (2.0 / PI).sqrt()).abs() < 1e-10);
    assert!(s.alpha.abs() < 1e-10);
    assert!((s.beta_sq - (1.0 - 2.0 / PI)).abs() < 1e-10);
}

#[test]
fn shifted_relu_matches_simpson() {
    for &b in &[-1.3, 0.0, 0.4, 2.5] {
        let s = hermite_stats(&Activation::ShiftedRelu { shift: b }, DEFAULT_ORDER).unwrap();
        let phi = |x: f64| (x - b).max(0.0);
        let c = simpson_expect(phi, b);
        let alpha = simpson_expect(|x| x * phi(x), b);
        let beta_sq = simpson_expect(|x| (phi(x) - c - alpha * x).powi(2), b);
        assert!((s.c - c).abs() < 1e-10, "b={b}");
        assert!((s.alpha - alpha).abs() < 1e-10, "b={b}");
        assert!((s.beta_sq - beta_sq).abs() < 1e-10, "b={b}");
    }
}

#[test]
fn neg_part_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000_000;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = z.min(0.0);
        s0 += v;
        s1 += z * v;
        s2 += v * v;
    }
    let nf = n as f64;
    let (c, a) = (s0 / nf, s1 / nf);
    let b2 = s2 / nf - c * c - a * a;
    let s = hermite_stats(&Activation::NegPart, DEFAULT_ORDER).unwrap();
    // Standard errors are below 3e-4 for every statistic.
    assert!((s.c - c).abs() < 2e-3);
    assert!((s.alpha - a).abs() < 2e-3);
    assert!((s.beta_sq - b2).abs() < 2e-3);
}

#[test]
fn order_doubling_is_stable() {
    for act in [
        Activation::NegPart,
        Activation::Abs,
        Activation::ShiftedRelu { shift: 0.3 },
    ] {
        let a = hermite_stats(&act, 100).unwrap();
        let b = hermite_stats(&act, 200).unwrap();
        assert!((a.c - b.c).abs() < 1e-10);
        assert!((a.alpha - b.alpha).abs() < 1e-10);
        assert!((a.beta_sq - b.beta_sq).abs() < 1e-10);
    }
}

#[test]
fn rejects_low_order_and_non_finite() {
    assert!(hermite_stats(&Activation::NegPart, 31).is_err());
    let bad = |x: f64| if x > 3.0 { f64::NAN } else { x };
    assert!(hermite_stats_fn(&bad, &[], DEFAULT_ORDER).is_err());
}

#[test]
fn tabulated_relu_matches_builtin() {
    let t = Table::from_csv("x,phi\n-1,0\n0,0\n1,1\n").unwrap();
    let a = hermite_stats(&Activation::Tabulated(t), DEFAULT_ORDER).unwrap();
    let b = hermite_stats(&Activation::ShiftedRelu { shift: 0.0 }, DEFAULT_ORDER).unwrap();
    assert!((a.c - b.c).abs() < 1e-10);
    assert!((a.alpha - b.alpha).abs() < 1e-10);
    assert!((a.beta_sq - b.beta_sq).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Stats of `t·φ + a + b·x` are `(t c + a, t α + b, t² β²)`.
    #[test]
    fn affine_covariance(t in -3.0f64..3.0, a in -2.0f64..2.0, b in -2.0f64..2.0, shift in -1.0f64..1.0) {
        let phi = move |x: f64| (x - shift).max(0.0);
        let s = hermite_stats_fn(&phi, &[shift], DEFAULT_ORDER).unwrap();
        let g = move |x: f64| t * phi(x) + a + b * x;
        let u = hermite_stats_fn(&g, &[shift], DEFAULT_ORDER).unwrap();
        prop_assert!((u.c - (t * s.c + a)).abs() < 1e-10);
        prop_assert!((u.alpha - (t * s.alpha + b)).abs() < 1e-10);
        prop_assert!((u.beta_sq - t * t * s.beta_sq).abs() < 1e-9);
    }

    /// The residual `ψ = φ - c - αx` has zero constant and linear parts and
    /// the same β².
    #[test]
    fn residual_is_idempotent(shift in -2.0f64..2.0) {
        let phi = move |x: f64| (x - shift).max(0.0);
        let s = hermite_stats_fn(&phi, &[shift], DEFAULT_ORDER).unwrap();
        let psi = move |x: f64| phi(x) - s.c - s.alpha * x;
        let r = hermite_stats_fn(&psi, &[shift], DEFAULT_ORDER).unwrap();
        prop_assert!(r.c.abs() < 1e-12 && r.alpha.abs() < 1e-12);
        prop_assert!((r.beta_sq - s.beta_sq).abs() < 1e-12);
    }
}
