use ntk_spectra::measure::{self, Grid, SpectralMeasure};
use ntk_spectra::{affine, convolve_classical, distance_ks, distance_w1, mixture};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Closed-form MP density with ratio `gamma` (continuous part only).
fn mp_density(gamma: f64, x: f64) -> f64 {
    let lo = (1.0 - gamma.sqrt()).powi(2);
    let hi = (1.0 + gamma.sqrt()).powi(2);
    if x <= lo || x >= hi {
        return 0.0;
    }
    ((hi - x) * (x - lo)).sqrt() / (2.0 * std::f64::consts::PI * gamma * x)
}

fn mp(gamma: f64) -> SpectralMeasure {
    let lo = (1.0 - gamma.sqrt()).powi(2);
    let hi = (1.0 + gamma.sqrt()).powi(2);
    let grid = Grid::spanning(lo, hi, 4001).unwrap();
    SpectralMeasure::from_density_fn(grid, |x| mp_density(gamma, x)).unwrap()
}

/// Closed-form MP Stieltjes transform, branch with positive imaginary part.
fn mp_stieltjes(gamma: f64, z: Complex64) -> Complex64 {
    let disc = ((z - 1.0 - gamma) * (z - 1.0 - gamma) - 4.0 * gamma).sqrt();
    let a = (1.0 - gamma - z + disc) / (2.0 * gamma * z);
    let b = (1.0 - gamma - z - disc) / (2.0 * gamma * z);
    if a.im > 0.0 {
        a
    } else {
        b
    }
}

#[test]
fn stieltjes_of_diracs() {
    let s = SpectralMeasure::dirac(0.0)
        .stieltjes(Complex64::new(0.0, 1.0))
        .unwrap();
    assert!((s - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    let s = SpectralMeasure::dirac(2.5)
        .stieltjes(Complex64::new(2.5, 1.0))
        .unwrap();
    assert!((s - Complex64::new(0.0, 1.0)).norm() < 1e-15);
}

#[test]
fn stieltjes_errors() {
    let m = SpectralMeasure::dirac(0.0);
    assert!(m.stieltjes(Complex64::new(1.0, 0.0)).is_err());
    assert!(m.stieltjes(Complex64::new(1.0, -1.0)).is_err());
}

#[test]
fn stieltjes_matches_closed_form_mp() {
    let z = Complex64::new(2.0, 0.1);
    let s = mp(0.5).stieltjes(z).unwrap();
    let r = mp_stieltjes(0.5, z);
    assert!((s - r).norm() < 2e-4, "{s} vs {r}");
    for &x in &[-1.0, 0.3, 1.0, 2.9, 5.0] {
        let z = Complex64::new(x, 0.5);
        assert!((mp(0.5).stieltjes(z).unwrap() - mp_stieltjes(0.5, z)).norm() < 1e-4);
    }
}

#[test]
fn stieltjes_exact_for_uniform() {
    // Uniform on [0, 1]: s(z) = log((1 - z) / (-z)).
    let m = SpectralMeasure::uniform(0.0, 1.0).unwrap();
    for &(x, y) in &[
        (0.5, 1e-6),
        (0.5, 1.0),
        (3.0, 0.2),
        (-2.0, 1e-3),
        (1e4, 1.0),
    ] {
        let z = Complex64::new(x, y);
        let r = ((1.0 - z) / (-z)).ln();
        let s = m.stieltjes(z).unwrap();
        assert!(
            (s - r).norm() < 1e-12 * r.norm().max(1.0),
            "{z}: {s} vs {r}"
        );
    }
}

#[test]
fn stieltjes_derivative_matches_finite_difference() {
    let m = mixture(&[0.3, 0.7], &[SpectralMeasure::dirac(0.2), mp(0.5)]).unwrap();
    let z = Complex64::new(1.3, 0.05);
    let (s, ds) = m.stieltjes_and_derivative(z);
    assert!((s - m.stieltjes_unchecked(z)).norm() < 1e-14);
    let h = 1e-6;
    let fd = (m.stieltjes_unchecked(z + h) - m.stieltjes_unchecked(z - h)) / (2.0 * h);
    assert!((ds - fd).norm() < 1e-5 * ds.norm());
}

#[test]
fn convolution_trivial_cases() {
    let c = convolve_classical(&SpectralMeasure::dirac(1.5), &SpectralMeasure::dirac(2.0)).unwrap();
    assert_eq!(c.atoms(), &[(3.5, 1.0)]);
    let m = mp(0.5);
    let c = convolve_classical(&SpectralMeasure::dirac(0.0), &m).unwrap();
    assert!(distance_w1(&c, &m) < 1e-12);
}

#[test]
fn convolution_of_mp_moments() {
    let m = mp(0.75);
    let c = convolve_classical(&m, &m).unwrap();
    assert!((c.total_mass() - 1.0).abs() < 1e-6);
    // Moment arithmetic for independent sums, exact up to rounding.
    assert!((c.mean() - 2.0 * m.mean()).abs() < 1e-10);
    let m2 = 2.0 * m.moment(2) + 2.0 * m.mean() * m.mean();
    assert!((c.moment(2) - m2).abs() < 1e-6);
    // Against the closed-form values (grid discretization of MP ~1e-4).
    assert!((c.mean() - 2.0).abs() < 1e-3);
    assert!((c.moment(2) - 5.5).abs() < 2e-3, "m2 = {}", c.moment(2));

    // Monte Carlo oracle: sums of two independent eigenvalues drawn from
    // Wishart matrices with ratio 0.75.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (p, n) = (300, 400);
    let mut eig = Vec::new();
    for _ in 0..6 {
        let x = nalgebra::DMatrix::<f64>::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
        let s = (&x * x.transpose()) / n as f64;
        eig.extend(s.symmetric_eigenvalues().iter().copied());
    }
    let draws = 1_000_000;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut idx = rand::distributions::Uniform::new(0, eig.len()).sample_iter(rng);
    for _ in 0..draws {
        let v = eig[idx.next().unwrap()] + eig[idx.next().unwrap()];
        sum += v;
        sum2 += v * v;
    }
    let mc2 = sum2 / draws as f64;
    assert!((sum / draws as f64 - c.mean()).abs() < 0.02);
    assert!(
        (mc2 - c.moment(2)).abs() < 0.08,
        "mc {mc2} vs {}",
        c.moment(2)
    );
}

#[test]
fn affine_examples() {
    let a = affine(&SpectralMeasure::dirac(1.0), 2.0, 3.0);
    assert_eq!(a.atoms(), &[(5.0, 1.0)]);
    let m = mp(0.5);
    assert!(distance_w1(&affine(&m, 1.0, 0.0), &m) < 1e-15);
    let s = affine(&m, 2.0, 0.0);
    assert!((s.mean() - 2.0).abs() < 1e-4);
    let (lo, hi) = s.support();
    let step = s.grid().step;
    assert!((lo - 2.0 * (1.0 - 0.5f64.sqrt()).powi(2)).abs() <= step + 1e-12);
    assert!((hi - 2.0 * (1.0 + 0.5f64.sqrt()).powi(2)).abs() <= step + 1e-12);
    let z = affine(&m, 0.0, 4.0);
    assert_eq!(z.atoms(), &[(4.0, 1.0)]);
}

#[test]
fn mixture_examples() {
    let m = mp(0.5);
    assert!(distance_w1(&mixture(&[1.0], &[m.clone()]).unwrap(), &m) < 1e-15);
    let two = mixture(
        &[0.5, 0.5],
        &[SpectralMeasure::dirac(0.0), SpectralMeasure::dirac(2.0)],
    )
    .unwrap();
    assert_eq!(two.atoms(), &[(0.0, 0.5), (2.0, 0.5)]);
    assert!(mixture(&[0.5, 0.6], &[m.clone(), m.clone()]).is_err());
    assert!(mixture(&[1.5, -0.5], &[m.clone(), m.clone()]).is_err());

    let g2 = 0.8;
    let mm = convolve_classical(&m, &m).unwrap();
    let chi_like = mixture(
        &[g2 / 2.0, 1.0 - g2, g2 / 2.0],
        &[mm, m.clone(), SpectralMeasure::dirac(0.0)],
    )
    .unwrap();
    assert!((chi_like.total_mass() - 1.0).abs() < 1e-6);
    assert!((chi_like.atom_at(0.0) - 0.4).abs() < 1e-14);
    assert!((chi_like.cdf(0.0) - 0.4).abs() < 1e-12);
    assert!(chi_like.cdf(-1e-9) == 0.0);
}

#[test]
fn cdf_and_quantile() {
    let d = SpectralMeasure::dirac(0.0);
    assert_eq!(d.cdf(-1.0), 0.0);
    assert_eq!(d.cdf(0.0), 1.0);
    let u = SpectralMeasure::uniform(0.0, 1.0).unwrap();
    assert!((u.quantile(0.5).unwrap() - 0.5).abs() < 1e-12);
    assert!((u.quantile(0.25).unwrap() - 0.25).abs() < 1e-12);
    assert!(u.quantile(1.5).is_err());
    assert!(u.quantile(-0.1).is_err());
    let hi = (1.0 + 0.5f64.sqrt()).powi(2);
    assert!((mp(0.5).cdf(hi) - 1.0).abs() < 1e-3);
    let two = SpectralMeasure::from_atoms(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
    assert_eq!(two.quantile(0.5).unwrap(), 0.0);
    assert_eq!(two.quantile(0.5000001).unwrap(), 2.0);
}

#[test]
fn distance_examples() {
    let m = mp(0.5);
    assert_eq!(distance_ks(&m, &m), 0.0);
    assert_eq!(distance_w1(&m, &m), 0.0);
    let d0 = SpectralMeasure::dirac(0.0);
    assert!((distance_w1(&d0, &SpectralMeasure::dirac(1.0)) - 1.0).abs() < 1e-15);
    let two = SpectralMeasure::from_atoms(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
    assert!((distance_w1(&d0, &two) - 1.0).abs() < 1e-15);
    assert!((distance_ks(&d0, &two) - 0.5).abs() < 1e-15);
    // W1 between a uniform law and its shift equals the shift.
    let u = SpectralMeasure::uniform(0.0, 1.0).unwrap();
    assert!((distance_w1(&u, &affine(&u, 1.0, 0.3)) - 0.3).abs() < 1e-12);
}

#[test]
fn w1_matches_quantile_integral() {
    // W1 = ∫_0^1 |Q_A(q) - Q_B(q)| dq as an independent oracle.
    let a = mp(0.5);
    let b = mixture(&[0.2, 0.8], &[SpectralMeasure::dirac(0.7), mp(0.25)]).unwrap();
    let n = 20000;
    let oracle: f64 = (0..n)
        .map(|k| {
            let q = (k as f64 + 0.5) / n as f64;
            (a.quantile(q).unwrap() - b.quantile(q).unwrap()).abs()
        })
        .sum::<f64>()
        / n as f64;
    assert!((distance_w1(&a, &b) - oracle).abs() < 1e-4);
}

#[test]
fn json_and_csv_round_trip() {
    let m = mixture(&[0.25, 0.75], &[SpectralMeasure::dirac(0.0), mp(0.5)]).unwrap();
    let text = m.to_json();
    assert!(text.starts_with("{\"atoms\":[[0.0,0.25]],\"grid\":{\"start\":"));
    let back = SpectralMeasure::from_json(&text).unwrap();
    assert_eq!(back, m);
    assert!(SpectralMeasure::from_json(
        "{\"atoms\":[[0.0,0.5]],\"grid\":{\"start\":0,\"step\":1,\"n\":0},\"density\":[]}"
    )
    .is_err());
    assert!(SpectralMeasure::from_json(
        "{\"atoms\":[],\"grid\":{\"start\":0,\"step\":1,\"n\":0},\"density\":[],\"x\":1}"
    )
    .is_err());
    let csv = m.to_csv();
    assert!(csv.starts_with("x,density\n"));
    assert!(csv.contains("\natom_x,atom_mass\n0.0,0.25\n"));
}

#[test]
fn atoms_merge_and_drop() {
    let m = SpectralMeasure::from_atoms(vec![(1.0, 0.5), (1.0 + 1e-14, 0.5 - 1e-13), (3.0, 1e-13)])
        .unwrap();
    assert_eq!(m.atoms().len(), 1);
    assert!((m.total_mass() - 1.0).abs() < 1e-15);
    assert!(SpectralMeasure::from_atoms(vec![(0.0, 0.5)]).is_err());
    assert!(SpectralMeasure::new(
        vec![],
        Grid::spanning(0.0, 1.0, 3).unwrap(),
        vec![1.0, -1.0, 1.0]
    )
    .is_err());
}

#[test]
fn cauchy_smoothing_of_dirac_is_lorentzian() {
    let grid = Grid::spanning(-50.0, 50.0, 20001).unwrap();
    let s = SpectralMeasure::dirac(0.0)
        .cauchy_smoothed(0.5, grid)
        .unwrap();
    let expected = 1.0 / (std::f64::consts::PI * 0.5);
    // Normalization on a finite window inflates the peak slightly.
    assert!((s.density_at(0.0) / expected - 1.0).abs() < 0.01);
}

fn arb_measure() -> impl Strategy<Value = SpectralMeasure> {
    (
        prop::collection::vec((-3.0f64..3.0, 0.05f64..1.0), 0..3),
        prop::collection::vec(0.0f64..2.0, 2..40),
        -2.0f64..2.0,
        0.01f64..0.3,
        0.1f64..1.0,
    )
        .prop_map(|(atoms, dens, start, step, cont)| {
            let atom_total: f64 = atoms.iter().map(|a| a.1).sum();
            let mut density = dens;
            if density.iter().all(|v| *v == 0.0) {
                density[0] = 1.0;
            }
            let grid = Grid::new(start, step, density.len()).unwrap();
            let cm = SpectralMeasure::normalized(vec![], grid, density).unwrap();
            let total = atom_total + cont;
            let mut parts = vec![cm];
            let mut weights = vec![cont / total];
            for (x, m) in atoms {
                parts.push(SpectralMeasure::dirac(x));
                weights.push(m / total);
            }
            let s: f64 = weights.iter().sum();
            let last = weights.len() - 1;
            weights[last] += 1.0 - s;
            measure::mixture(&weights, &parts).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constructed_measures_are_normalized(m in arb_measure()) {
        prop_assert!((m.total_mass() - 1.0).abs() < 1e-6);
        prop_assert!(m.density().iter().all(|v| *v >= 0.0));
        prop_assert!(m.atoms().iter().all(|a| a.1 >= 0.0));
    }

    #[test]
    fn stieltjes_is_herglotz(m in arb_measure(), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: f64 = rand::Rng::gen_range(&mut rng, -10.0..10.0);
            let y: f64 = 10f64.powf(rand::Rng::gen_range(&mut rng, -6.0..2.0));
            let s = m.stieltjes(Complex64::new(x, y)).unwrap();
            prop_assert!(s.im > 0.0);
        }
    }

    #[test]
    fn stieltjes_far_field(m in arb_measure(), angle in 0.1f64..3.0) {
        let (lo, hi) = m.support();
        let radius = lo.abs().max(hi.abs()).max(1e-3);
        let z = Complex64::from_polar(100.0 * radius, angle);
        let s = m.stieltjes(z).unwrap();
        let m1 = m.moment(1).abs().max(m.moment(2).sqrt());
        prop_assert!((z * s + 1.0).norm() <= 10.0 * m1 / z.norm() + 1e-12);
    }

    #[test]
    fn convolution_commutes(a in arb_measure(), b in arb_measure()) {
        let ab = convolve_classical(&a, &b).unwrap();
        let ba = convolve_classical(&b, &a).unwrap();
        prop_assert!(distance_w1(&ab, &ba) < 1e-10);
        let err = (ab.mean() - a.mean() - b.mean()).abs();
        prop_assert!(err < 1e-6 + 0.5 * (a.grid().step + b.grid().step), "mean error {}", err);
    }

    #[test]
    fn affine_inverts(m in arb_measure(), a in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], b in -2.0f64..2.0) {
        let back = affine(&affine(&m, a, b), 1.0 / a, -b / a);
        prop_assert!(distance_w1(&back, &m) < 1e-10);
    }

    #[test]
    fn ks_bounded_and_symmetric(a in arb_measure(), b in arb_measure()) {
        let k1 = distance_ks(&a, &b);
        let k2 = distance_ks(&b, &a);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&k1));
        prop_assert!((k1 - k2).abs() < 1e-12);
        prop_assert!((distance_w1(&a, &b) - distance_w1(&b, &a)).abs() < 1e-12);
    }
}
