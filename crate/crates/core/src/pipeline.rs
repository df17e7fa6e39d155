//! End-to-end experiments: the limiting density of `K`, matched
//! simulations, comparison metrics and the report bundle written to disk.
//!
//! The limit is `gram_map(μ_{ν,φ}, γ₁)`, with the tensor law `μ_{ν,φ}` taken
//! from the closed form when it applies and from the finite free
//! approximation otherwise.

use crate::activation::{hermite_stats, Activation, ActivationStats, DEFAULT_ORDER};
use crate::error::{validation, Error, Result};
use crate::free_ops::{
    gram_map_with_diagnostics, q_limit_general, q_limit_special, special_case_applies,
    FreeApproxConfig, GeneralDiagnostics, GridSpec, MpMapConfig, SolverDiagnostics,
};
use crate::measure::{distance_ks, distance_w1, Grid, SpectralMeasure};
use crate::sim::{
    batch_spectra, eigenvalues_csv, Histogram, KernelKind, ModelParams, NuSpec, SeedRun, XLaw,
};
use crate::tensor::PSD_TOLERANCE;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Version of the `report.json` layout.
pub const SCHEMA_VERSION: u32 = 1;
/// Density below which a grid node counts as outside the support.
pub const GAP_DENSITY: f64 = 1e-4;
/// Minimal gap length in grid steps.
pub const GAP_MIN_STEPS: usize = 5;
/// Simulated eigenvalues at most this fraction of the largest one count as
/// the atom at zero.
pub const SIM_ATOM_RELATIVE: f64 = 1e-9;
/// Relative tolerance when sizes and shape ratios are both given.
const RATIO_TOL: f64 = 1e-9;

/// Settings of the theory computation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TheoryConfig {
    /// Solver for the MP maps (law of `χ` and the final Gram map).
    pub mp: MpMapConfig,
    /// Finite free approximation used when no closed form applies.
    pub free: FreeApproxConfig,
}

/// How the tensor law was obtained and how the maps converged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryDiagnostics {
    /// `special` (closed form) or `general` (finite free approximation).
    pub route: String,
    pub stats: ActivationStats,
    pub gram: SolverDiagnostics,
    pub general: Option<GeneralDiagnostics>,
    /// Mass of the smoothed tensor law below zero removed before the Gram map.
    pub clipped_mass: f64,
}

/// The limiting density together with the intermediate tensor law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theory {
    pub density: SpectralMeasure,
    pub tensor_law: SpectralMeasure,
    pub diagnostics: TheoryDiagnostics,
}

/// Limiting spectral law of `K` for the given shape ratios.
pub fn theory_density(
    nu: &SpectralMeasure,
    gamma1: f64,
    gamma2: f64,
    stats: &ActivationStats,
    cfg: &TheoryConfig,
) -> Result<SpectralMeasure> {
    theory_with_diagnostics(nu, gamma1, gamma2, stats, cfg).map(|t| t.density)
}

/// [`theory_density`] with the tensor law and solver diagnostics.
pub fn theory_with_diagnostics(
    nu: &SpectralMeasure,
    gamma1: f64,
    gamma2: f64,
    stats: &ActivationStats,
    cfg: &TheoryConfig,
) -> Result<Theory> {
    let (tensor_law, route, general, clipped_mass) = if special_case_applies(nu, stats) {
        (
            q_limit_special(nu, gamma2, stats, &cfg.mp)?,
            "special",
            None,
            0.0,
        )
    } else {
        let (m, diag) = q_limit_general(nu, gamma2, stats, &cfg.free)?;
        let (m, clipped) = clip_negative(&m)?;
        (m, "general", Some(diag), clipped)
    };
    let (density, gram) = gram_map_with_diagnostics(&tensor_law, gamma1, &cfg.mp)?;
    Ok(Theory {
        density,
        tensor_law,
        diagnostics: TheoryDiagnostics {
            route: route.into(),
            stats: *stats,
            gram,
            general,
            clipped_mass,
        },
    })
}

/// Restricts a measure to `[0, ∞)` and renormalizes. Returns the removed
/// mass. The smoothed tensor law leaks a Cauchy tail below zero.
fn clip_negative(m: &SpectralMeasure) -> Result<(SpectralMeasure, f64)> {
    let grid = m.grid();
    let negative_atoms = m.atoms().iter().any(|a| a.0 < 0.0);
    if (grid.is_empty() || grid.start >= 0.0) && !negative_atoms {
        return Ok((m.clone(), 0.0));
    }
    let first = (0..grid.n).find(|&k| grid.x(k) >= 0.0).unwrap_or(grid.n);
    if first == grid.n && m.atoms().iter().all(|a| a.0 < 0.0) {
        return Err(Error::Numerical(
            "tensor law has no mass on [0, inf)".into(),
        ));
    }
    let kept = if first < grid.n {
        Grid::new(grid.x(first), grid.step, grid.n - first)?
    } else {
        Grid::EMPTY
    };
    let density = m.density()[first..].to_vec();
    let atoms: Vec<(f64, f64)> = m.atoms().iter().copied().filter(|a| a.0 >= 0.0).collect();
    let clipped = SpectralMeasure::normalized(atoms, kept, density)?;
    let removed = m.cdf(0.0) - m.atom_at(0.0);
    Ok((clipped, removed.max(0.0)))
}

/// Maximal intervals inside the support where the density stays below
/// [`GAP_DENSITY`] over at least [`GAP_MIN_STEPS`] grid steps. Each gap is
/// reported by the grid nodes bounding it.
pub fn detect_gaps(m: &SpectralMeasure) -> Vec<(f64, f64)> {
    let grid = m.grid();
    let above: Vec<usize> = m
        .density()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= GAP_DENSITY)
        .map(|(k, _)| k)
        .collect();
    above
        .windows(2)
        .filter(|w| w[1] - w[0] >= GAP_MIN_STEPS)
        .map(|w| (grid.x(w[0]), grid.x(w[1])))
        .collect()
}

/// Smallest interval holding the atoms and every node with density at
/// least [`GAP_DENSITY`]; the inversion leaves thin tails beyond it.
pub fn effective_support(m: &SpectralMeasure) -> (f64, f64) {
    let grid = m.grid();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, _) in m.atoms() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let dens = m.density();
    if let Some(first) = dens.iter().position(|&v| v >= GAP_DENSITY) {
        let last = dens
            .iter()
            .rposition(|&v| v >= GAP_DENSITY)
            .unwrap_or(first);
        lo = lo.min(grid.x(first));
        hi = hi.max(grid.x(last));
    }
    (lo, hi)
}

/// Experiment description. Sizes `n, d, p` are needed for simulation;
/// without them only the theory is computed. The shape ratios follow from
/// the sizes and, if also given, must agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub x_law: XLaw,
    pub nu: NuSpec,
    /// Activation `φ`, e.g. `identity`, `neg_part`, `shifted_relu:0.5`.
    pub activation: String,
    pub kernels: Vec<KernelKind>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// Points of the theory grid.
    pub grid: usize,
    /// Inversion offset of the MP maps; `None` picks it from the grid.
    pub eta: Option<f64>,
    /// Parallel seed runs (`0` uses all cores).
    pub jobs: usize,
    pub quadrature_order: usize,
    pub free_approx: FreeApproxConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: None,
            d: None,
            p: None,
            gamma1: None,
            gamma2: None,
            x_law: XLaw::Gaussian,
            nu: NuSpec::Delta(1.0),
            activation: "identity".into(),
            kernels: vec![KernelKind::K],
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: None,
            grid: 4096,
            eta: None,
            jobs: 0,
            quadrature_order: DEFAULT_ORDER,
            free_approx: FreeApproxConfig::default(),
        }
    }
}

/// A validated configuration with its shape ratios.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sizes: Option<(usize, usize, usize)>,
    pub activation: Activation,
    pub nu: SpectralMeasure,
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<Resolved> {
        let sizes = match (self.n, self.d, self.p) {
            (Some(n), Some(d), Some(p)) => Some((n, d, p)),
            (None, None, None) => None,
            _ => return validation("n, d and p must be given together"),
        };
        let ratio = |given: Option<f64>, implied: Option<f64>, name: &str| -> Result<f64> {
            match (given, implied) {
                (Some(g), Some(i)) if (g - i).abs() > RATIO_TOL * i.abs().max(1.0) => validation(
                    format!("{name} = {g} disagrees with the sizes, which give {i}"),
                ),
                (_, Some(i)) => Ok(i),
                (Some(g), None) if g > 0.0 && g.is_finite() => Ok(g),
                (Some(g), None) => validation(format!("{name} must be positive, got {g}")),
                (None, None) => validation(format!("{name} or the sizes n, d, p must be given")),
            }
        };
        let gamma1 = ratio(
            self.gamma1,
            sizes.map(|(n, d, p)| n as f64 / (d * p) as f64),
            "gamma1",
        )?;
        let gamma2 = ratio(
            self.gamma2,
            sizes.map(|(_, d, p)| p as f64 / d as f64),
            "gamma2",
        )?;
        if self.kernels.is_empty() && !self.seeds.is_empty() {
            return validation("at least one kernel is required for simulation");
        }
        if self.quadrature_order < 2 {
            return validation("quadrature order must be at least 2");
        }
        self.nu.validate()?;
        self.free_approx.validate()?;
        self.mp_config().validate()?;
        GridSpec::with_points(self.grid).resolve(0.0, 1.0)?;
        let activation = Activation::parse(&self.activation)?;
        let nu = self.nu.measure()?;
        Ok(Resolved {
            gamma1,
            gamma2,
            sizes,
            activation,
            nu,
        })
    }

    pub fn mp_config(&self) -> MpMapConfig {
        MpMapConfig {
            eta: self.eta,
            grid: GridSpec::with_points(self.grid),
            ..MpMapConfig::default()
        }
    }

    pub fn theory_config(&self) -> TheoryConfig {
        TheoryConfig {
            mp: self.mp_config(),
            free: self.free_approx.clone(),
        }
    }
}

/// Echo of the resolved parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub x_law: XLaw,
    pub nu: NuSpec,
    pub activation: String,
    pub stats: ActivationStats,
    pub kernels: Vec<KernelKind>,
    pub seeds: Vec<u64>,
    pub grid: usize,
}

/// Summary of the limiting density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub route: String,
    pub atom_at_zero: f64,
    /// Range where the density is at least [`GAP_DENSITY`], atoms included.
    pub support: (f64, f64),
    pub mean: f64,
    pub disconnected_support: bool,
    pub gaps: Vec<(f64, f64)>,
}

/// Distances between the theory and the simulated spectrum of one kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMetrics {
    pub kernel: KernelKind,
    /// Eigenvalues per seed.
    pub size: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Distances of the pooled ESD to the theory; `None` for kernels the
    /// theory does not describe.
    pub w1: Option<f64>,
    pub ks: Option<f64>,
    /// W1 between the continuous parts after removing the theory atom at
    /// zero and the same fraction of the smallest simulated eigenvalues.
    pub w1_continuous: Option<f64>,
    pub theory_atom: Option<f64>,
    pub simulated_atom: f64,
    pub per_seed_w1: Vec<f64>,
    /// Sample standard deviation of `per_seed_w1`.
    pub seed_spread: f64,
}

/// Distances between the pooled ESDs of two kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub a: KernelKind,
    pub b: KernelKind,
    pub w1: f64,
    pub ks: f64,
}

/// Outcome of one post-run sanity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Wall-clock timings in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub theory: f64,
    pub simulation: f64,
    pub metrics: f64,
    pub total: f64,
}

/// Everything an experiment produces. The measures are written as CSV and
/// skipped in the JSON report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub params: ParamsEcho,
    /// `None` for simulation-only runs.
    pub theory: Option<TheorySummary>,
    pub metrics: Vec<KernelMetrics>,
    pub pairwise: Vec<PairMetrics>,
    pub invariants: Vec<InvariantCheck>,
    pub timing: Timing,
    #[serde(skip)]
    pub theory_measure: Option<SpectralMeasure>,
    #[serde(skip)]
    pub esd: Vec<(KernelKind, SpectralMeasure)>,
    #[serde(skip)]
    pub diagnostics: Option<TheoryDiagnostics>,
}

impl ExperimentReport {
    pub fn metrics_for(&self, kind: KernelKind) -> Option<&KernelMetrics> {
        self.metrics.iter().find(|m| m.kernel == kind)
    }

    pub fn invariants_hold(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }
}

/// Runs the experiment and writes the bundle to `cfg.output_dir` when set.
/// A failed invariant is reported as an error after the files are written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let resolved = cfg.resolve()?;
    let stats = hermite_stats(&resolved.activation, cfg.quadrature_order)?;
    let start = Instant::now();
    let theory = theory_with_diagnostics(
        &resolved.nu,
        resolved.gamma1,
        resolved.gamma2,
        &stats,
        &cfg.theory_config(),
    )?;
    let theory_secs = start.elapsed().as_secs_f64();
    run_experiment_with_theory(cfg, &resolved, theory, theory_secs)
}

/// [`run_experiment`] with a precomputed theory (e.g. from a cache).
pub fn run_experiment_with_theory(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    theory: Theory,
    theory_secs: f64,
) -> Result<ExperimentReport> {
    assemble(cfg, resolved, Some(theory), theory_secs)
}

/// Simulation only: spectra, histograms and pairwise kernel distances.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let resolved = cfg.resolve()?;
    if resolved.sizes.is_none() || cfg.seeds.is_empty() {
        return validation("simulation needs n, d, p and at least one seed");
    }
    assemble(cfg, &resolved, None, 0.0)
}

fn assemble(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    theory: Option<Theory>,
    theory_secs: f64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let runs = match resolved.sizes {
        Some((n, d, p)) if !cfg.seeds.is_empty() => {
            let params = ModelParams {
                n,
                d,
                p,
                x_law: cfg.x_law,
                nu: cfg.nu,
                activation: resolved.activation.clone(),
                seed: 0,
            };
            batch_spectra(&params, &cfg.kernels, &cfg.seeds, cfg.jobs)?
        }
        _ => Vec::new(),
    };
    let simulation_secs = start.elapsed().as_secs_f64();

    let start_metrics = Instant::now();
    let kernels: Vec<KernelKind> = if runs.is_empty() {
        Vec::new()
    } else {
        cfg.kernels.clone()
    };
    let mut metrics = Vec::new();
    let mut esd = Vec::new();
    let mut invariants = Vec::new();
    for &kind in &kernels {
        let per_seed: Vec<&[f64]> = runs
            .iter()
            .map(|r| r.eigenvalues(kind).expect("kernel was requested"))
            .collect();
        let (m, pooled, checks) =
            kernel_metrics(kind, &per_seed, theory.as_ref().map(|t| &t.density))?;
        metrics.push(m);
        esd.push((kind, pooled));
        invariants.extend(checks);
    }
    let mut pairwise = Vec::new();
    for (i, (a, ea)) in esd.iter().enumerate() {
        for (b, eb) in &esd[i + 1..] {
            pairwise.push(PairMetrics {
                a: *a,
                b: *b,
                w1: distance_w1(ea, eb),
                ks: distance_ks(ea, eb),
            });
        }
    }
    let summary = theory.as_ref().map(|t| {
        let gaps = detect_gaps(&t.density);
        TheorySummary {
            route: t.diagnostics.route.clone(),
            atom_at_zero: t.density.atom_at(0.0),
            support: effective_support(&t.density),
            mean: t.density.mean(),
            disconnected_support: !gaps.is_empty(),
            gaps,
        }
    });
    let stats = match &theory {
        Some(t) => t.diagnostics.stats,
        None => hermite_stats(&resolved.activation, cfg.quadrature_order)?,
    };
    let metrics_secs = start_metrics.elapsed().as_secs_f64();
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        params: ParamsEcho {
            n: resolved.sizes.map(|s| s.0),
            d: resolved.sizes.map(|s| s.1),
            p: resolved.sizes.map(|s| s.2),
            gamma1: resolved.gamma1,
            gamma2: resolved.gamma2,
            x_law: cfg.x_law,
            nu: cfg.nu,
            activation: resolved.activation.name(),
            stats,
            kernels,
            seeds: runs.iter().map(|r| r.seed).collect(),
            grid: cfg.grid,
        },
        theory: summary,
        metrics,
        pairwise,
        invariants,
        timing: Timing {
            theory: theory_secs,
            simulation: simulation_secs,
            metrics: metrics_secs,
            total: theory_secs + simulation_secs + metrics_secs,
        },
        theory_measure: theory.as_ref().map(|t| t.density.clone()),
        esd,
        diagnostics: theory.map(|t| t.diagnostics),
    };
    if let Some(dir) = &cfg.output_dir {
        write_bundle(&report, &runs, dir)?;
    }
    if let Some(bad) = report.invariants.iter().find(|c| !c.passed) {
        return Err(Error::Invariant(format!("{}: {}", bad.name, bad.detail)));
    }
    Ok(report)
}

/// Theory distances of one kernel plus its sanity checks.
fn kernel_metrics(
    kind: KernelKind,
    per_seed: &[&[f64]],
    theory: Option<&SpectralMeasure>,
) -> Result<(KernelMetrics, SpectralMeasure, Vec<InvariantCheck>)> {
    let raw: Vec<f64> = per_seed.iter().flat_map(|r| r.iter().copied()).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Numerical zeros (±1e-14) are placed exactly at the theory atom.
    let atom_cut = SIM_ATOM_RELATIVE * max.abs();
    let snap = |v: f64| if v.abs() <= atom_cut { 0.0 } else { v };
    let per_seed: Vec<Vec<f64>> = per_seed
        .iter()
        .map(|r| r.iter().map(|&v| snap(v)).collect())
        .collect();
    let per_seed: Vec<&[f64]> = per_seed.iter().map(|r| r.as_slice()).collect();
    let all: Vec<f64> = raw.iter().map(|&v| snap(v)).collect();
    let pooled = crate::sim::mean_esd(&per_seed)?;
    let simulated_atom = all.iter().filter(|&&v| v <= atom_cut).count() as f64 / all.len() as f64;
    let mut checks = vec![InvariantCheck {
        name: format!("psd_{}", kind.name()),
        passed: min >= -PSD_TOLERANCE * max.abs().max(1.0),
        detail: format!("smallest eigenvalue {min:.3e}, largest {max:.3e}"),
    }];
    let mut m = KernelMetrics {
        kernel: kind,
        size: per_seed.first().map_or(0, |r| r.len()),
        min_eigenvalue: min,
        max_eigenvalue: max,
        w1: None,
        ks: None,
        w1_continuous: None,
        theory_atom: None,
        simulated_atom,
        per_seed_w1: Vec::new(),
        seed_spread: 0.0,
    };
    let theory = match theory {
        Some(t) if kind != KernelKind::Ck => t,
        _ => return Ok((m, pooled, checks)),
    };
    let w1 = distance_w1(theory, &pooled);
    let per_seed_w1 = per_seed
        .iter()
        .map(|r| Ok(distance_w1(theory, &SpectralMeasure::empirical(r)?)))
        .collect::<Result<Vec<f64>>>()?;
    let spread = sample_std(&per_seed_w1);
    let bound = per_seed_w1[0] + 2.0 * spread;
    checks.push(InvariantCheck {
        name: format!("mean_esd_w1_{}", kind.name()),
        passed: w1 <= bound + 1e-12,
        detail: format!("W1 of the mean ESD {w1:.4e}, single-seed bound {bound:.4e}"),
    });
    m.w1 = Some(w1);
    m.ks = Some(distance_ks(theory, &pooled));
    m.w1_continuous = Some(continuous_w1(theory, &all)?);
    m.theory_atom = Some(theory.atom_at(0.0));
    m.per_seed_w1 = per_seed_w1;
    m.seed_spread = spread;
    Ok((m, pooled, checks))
}

/// W1 after removing the theory atom at zero and the matching fraction of
/// the smallest eigenvalues.
pub fn continuous_w1(theory: &SpectralMeasure, eigenvalues: &[f64]) -> Result<f64> {
    let cont = match theory.continuous_part() {
        Some(c) => c,
        None => return validation("the theory has no continuous part"),
    };
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let drop = (theory.atom_at(0.0) * sorted.len() as f64).floor() as usize;
    let rest = &sorted[drop.min(sorted.len().saturating_sub(1))..];
    Ok(distance_w1(&cont, &SpectralMeasure::empirical(rest)?))
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Writes `report.json`, `diagnostics.json`, `theory.csv` and per kernel
/// `esd_<kernel>.csv` and `histogram_<kernel>.csv`.
pub fn write_bundle(report: &ExperimentReport, runs: &[SeedRun], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    if let Some(diag) = &report.diagnostics {
        fs::write(
            dir.join("diagnostics.json"),
            serde_json::to_string_pretty(diag)? + "\n",
        )?;
    }
    if let Some(theory) = &report.theory_measure {
        fs::write(dir.join("theory.csv"), theory.to_csv())?;
    }
    for &(kind, _) in &report.esd {
        let mut pooled: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.eigenvalues(kind).unwrap_or(&[]).iter().copied())
            .collect();
        pooled.sort_by(f64::total_cmp);
        fs::write(
            dir.join(format!("esd_{}.csv", kind.name())),
            eigenvalues_csv(&pooled),
        )?;
        let hist = Histogram::freedman_diaconis(&pooled)?;
        fs::write(
            dir.join(format!("histogram_{}.csv", kind.name())),
            hist.to_csv(),
        )?;
    }
    Ok(())
}
