use ntk_spectra::free_ops::{chi_law, gram_map, mp_map, FreeApproxConfig, GridSpec, MpMapConfig};
use ntk_spectra::pipeline::*;
use ntk_spectra::sim::{KernelKind, NuSpec};
use ntk_spectra::{distance_ks, distance_w1, hermite_stats, Activation, Error, SpectralMeasure};
use std::fs;

fn stats(name: &str) -> ntk_spectra::ActivationStats {
    hermite_stats(&Activation::parse(name).unwrap(), 200).unwrap()
}

fn sized(n: usize, d: usize, p: usize, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        n: Some(n),
        d: Some(d),
        p: Some(p),
        seeds,
        ..Default::default()
    }
}

#[test]
fn linear_delta_is_gram_map_of_chi_law() {
    let cfg = TheoryConfig::default();
    let delta = SpectralMeasure::dirac(1.0);
    let theory = theory_with_diagnostics(&delta, 0.5, 0.8, &stats("identity"), &cfg).unwrap();
    assert_eq!(theory.diagnostics.route, "special");
    let chi = chi_law(&delta, 0.8, &cfg.mp).unwrap();
    let direct = gram_map(&chi, 0.5, &cfg.mp).unwrap();
    assert!(distance_w1(&theory.density, &direct) < 1e-12);
    // Gram-law moments: m1 = m1(π), m2 = γ1 m2(π) + m1(π)².
    let m1 = chi.moment(1);
    assert!((m1 - 1.0).abs() < 1e-3, "{m1}");
    assert!((theory.density.moment(1) - m1).abs() < 1e-3);
    let m2 = 0.5 * chi.moment(2) + m1 * m1;
    assert!((theory.density.moment(2) - m2).abs() < 1e-2 * m2);
}

#[test]
fn small_gamma1_concentrates_at_the_tensor_mean() {
    // The law is very narrow, so the inversion offset's Lorentzian tails
    // would add ≈ ηL/π to the variance; use a small η and a fine grid.
    let mut cfg = TheoryConfig::default();
    cfg.mp.eta = Some(5e-8);
    cfg.mp.grid = GridSpec::with_points(16384);
    let nu = SpectralMeasure::dirac(1.0);
    let s = stats("identity");
    let chi = chi_law(&nu, 0.8, &cfg.mp).unwrap();
    let a = theory_density(&nu, 1e-3, 0.8, &s, &cfg).unwrap();
    let b = theory_density(&nu, 1e-4, 0.8, &s, &cfg).unwrap();
    // Near-Gaussian concentration at m1(π) with variance γ1 m2(π).
    for (m, g) in [(&a, 1e-3), (&b, 1e-4)] {
        assert!((m.mean() - 1.0).abs() < 1e-3);
        let var = g * chi.moment(2);
        assert!(
            (m.variance() - var).abs() < 0.05 * var,
            "{} vs {var}",
            m.variance()
        );
    }
    let gauss_w1 = (2.0 / std::f64::consts::PI * chi.moment(2)).sqrt() * (1e-3f64.sqrt() - 1e-2);
    assert!((distance_w1(&a, &b) - gauss_w1).abs() < 0.1 * gauss_w1);
    // The literal MP map tends to its input instead.
    let la = mp_map(&chi, 1e-3, &cfg.mp).unwrap();
    let lb = mp_map(&chi, 1e-4, &cfg.mp).unwrap();
    assert!(distance_w1(&la, &lb) <= 2e-2);
    assert!(distance_w1(&lb, &chi) <= 2e-2);
}

#[test]
fn neg_part_bulk_is_unimodal_with_shifted_mean() {
    let s = stats("neg_part");
    let theory = theory_density(
        &SpectralMeasure::dirac(1.0),
        0.5,
        0.8,
        &s,
        &TheoryConfig::default(),
    )
    .unwrap();
    let expected = s.alpha * s.alpha + s.beta_sq;
    assert!((theory.mean() - expected).abs() < 1e-3 * expected);
    assert_eq!(theory.atom_at(0.0), 0.0);
    // One interior maximum of the density, away from the tails.
    let dens = theory.density();
    let peak = dens.iter().copied().fold(0.0, f64::max);
    let maxima = dens
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > 1e-3 * peak)
        .count();
    assert_eq!(maxima, 1);
    assert!(effective_support(&theory).0 > 0.0);
    assert!(detect_gaps(&theory).is_empty());
}

#[test]
fn general_route_keeps_the_mean() {
    let cfg = TheoryConfig {
        mp: MpMapConfig::default(),
        free: FreeApproxConfig {
            pa: 32,
            replicas: 2,
            grid: GridSpec::with_points(512),
            ..Default::default()
        },
    };
    let s = stats("neg_part");
    let nu = NuSpec::TwoPoint {
        v1: 1.0,
        v2: 2.0,
        w: 0.5,
    }
    .measure()
    .unwrap();
    let theory = theory_with_diagnostics(&nu, 0.5, 0.8, &s, &cfg).unwrap();
    assert_eq!(theory.diagnostics.route, "general");
    assert!(theory.diagnostics.clipped_mass < 0.1);
    assert!(theory.tensor_law.grid().start >= 0.0);
    // The Gram map preserves the mean exactly; the η-smoothed tensor law
    // carries a Cauchy-tail bias of a few percent.
    let mean = theory.density.mean();
    assert!((mean - theory.tensor_law.mean()).abs() < 1e-3 * mean);
    let expected = 1.5 * (s.alpha * s.alpha + s.beta_sq);
    assert!(
        (mean - expected).abs() < 0.15 * expected,
        "{mean} vs {expected}"
    );
}

#[test]
fn gap_detection_is_monotone_in_atom_separation() {
    let s = stats("identity");
    let cfg = TheoryConfig::default();
    let mut found = 0;
    for g1 in [0.5, 1.0, 2.0] {
        for g2 in [0.5, 1.0] {
            let gap = |v2: f64| {
                let nu = NuSpec::TwoPoint {
                    v1: 1.0,
                    v2,
                    w: 0.5,
                }
                .measure()
                .unwrap();
                !detect_gaps(&theory_density(&nu, g1, g2, &s, &cfg).unwrap()).is_empty()
            };
            if gap(30.0) {
                found += 1;
                assert!(gap(60.0), "gap lost at gamma1 = {g1}, gamma2 = {g2}");
            }
        }
    }
    assert!(found > 0);
}

#[test]
fn self_comparison_is_zero() {
    let theory = theory_density(
        &SpectralMeasure::dirac(1.0),
        0.5,
        0.8,
        &stats("identity"),
        &TheoryConfig::default(),
    )
    .unwrap();
    assert_eq!(distance_w1(&theory, &theory), 0.0);
    assert_eq!(distance_ks(&theory, &theory), 0.0);
}

#[test]
fn zero_seeds_give_a_theory_only_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        gamma1: Some(0.5),
        gamma2: Some(0.8),
        seeds: Vec::new(),
        output_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(report.metrics.is_empty());
    assert!(report.params.seeds.is_empty());
    assert!(dir.path().join("theory.csv").exists());
    assert!(dir.path().join("report.json").exists());
    assert!(!dir.path().join("esd_k.csv").exists());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], SCHEMA_VERSION);
    assert_eq!(json["theory"]["disconnected_support"], false);
}

#[test]
fn reruns_write_identical_csv_files() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sized(300, 20, 15, vec![0, 1]);
        cfg.kernels = vec![KernelKind::K, KernelKind::Ntk];
        cfg.activation = "neg_part".into();
        cfg.output_dir = Some(dir.path().to_path_buf());
        run_experiment(&cfg).unwrap();
        dir
    };
    let (a, b) = (run(), run());
    for name in [
        "theory.csv",
        "esd_k.csv",
        "esd_ntk.csv",
        "histogram_k.csv",
        "histogram_ntk.csv",
    ] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn report_metrics_and_invariants() {
    let mut cfg = sized(400, 25, 20, vec![0, 1, 2]);
    cfg.kernels = vec![KernelKind::K, KernelKind::Ck];
    let report = run_experiment(&cfg).unwrap();
    assert!(report.invariants_hold());
    let k = report.metrics_for(KernelKind::K).unwrap();
    assert_eq!(k.size, 400);
    assert_eq!(k.per_seed_w1.len(), 3);
    let mean_w1 = k.per_seed_w1.iter().sum::<f64>() / 3.0;
    assert!(
        k.w1.unwrap() <= mean_w1 + 1e-12,
        "convexity of W1 in the ESD"
    );
    assert!(k.ks.unwrap() >= 0.0 && k.seed_spread >= 0.0);
    let ck = report.metrics_for(KernelKind::Ck).unwrap();
    assert!(ck.w1.is_none());
    assert_eq!(report.pairwise.len(), 1);
}

#[test]
fn atom_excision_matches_the_theory_atom() {
    // γ1 = 2, γ2 = 1: the limit has an atom 1 - (1 - 1/2)/2 at zero, and
    // K has rank at most d(d+1)/2 here.
    let (n, d) = (800, 20);
    let mut cfg = sized(n, d, d, vec![0, 1]);
    cfg.kernels = vec![KernelKind::K];
    let report = run_experiment(&cfg).unwrap();
    let k = report.metrics_for(KernelKind::K).unwrap();
    let atom = k.theory_atom.unwrap();
    assert!((atom - 0.75).abs() < 1e-6, "{atom}");
    let rank_atom = 1.0 - (d * (d + 1) / 2) as f64 / n as f64;
    assert!(
        (k.simulated_atom - rank_atom).abs() < 1e-12,
        "{}",
        k.simulated_atom
    );
    assert!(k.ks.unwrap() < 0.05, "{:?}", k.ks);
}

#[test]
fn weak_convergence_along_fixed_ratios() {
    let w1: Vec<f64> = [(500, 32, 25), (1000, 50, 40), (2000, 71, 56)]
        .iter()
        .map(|&(n, d, p)| {
            let report = run_experiment(&sized(n, d, p, vec![0, 1])).unwrap();
            report.metrics_for(KernelKind::K).unwrap().w1.unwrap()
        })
        .collect();
    assert!(w1[2] < w1[0], "{w1:?}");
    assert!(w1[2] <= 0.08, "{w1:?}");
}

#[test]
fn config_validation() {
    let bad = ExperimentConfig {
        n: Some(1000),
        d: Some(50),
        p: Some(40),
        gamma1: Some(0.7),
        ..Default::default()
    };
    assert!(matches!(bad.resolve(), Err(Error::Validation(_))));
    let partial = ExperimentConfig {
        n: Some(1000),
        ..Default::default()
    };
    assert!(matches!(partial.resolve(), Err(Error::Validation(_))));
    let missing = ExperimentConfig::default();
    assert!(matches!(missing.resolve(), Err(Error::Validation(_))));
    let unknown = r#"{"gamma1": 0.5, "gamma2": 0.8, "typo": 1}"#;
    assert!(serde_json::from_str::<ExperimentConfig>(unknown).is_err());
    let ok: ExperimentConfig =
        serde_json::from_str(r#"{"gamma1": 0.5, "gamma2": 0.8, "nu": "two_point:1,30,0.5"}"#)
            .unwrap();
    let resolved = ok.resolve().unwrap();
    assert_eq!(resolved.gamma1, 0.5);
    assert!(resolved.sizes.is_none());
}
