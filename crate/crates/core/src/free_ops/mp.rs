//! Marchenko–Pastur laws and the MP map `ν ↦ MP^γ ⊠ ν`.
//!
//! Both the sample-covariance map and its Gram-matrix counterpart are solved
//! pointwise on a grid `z = x + iη`. Each block of grid points starts with an
//! η-continuation from far above the axis and then warm-starts Newton from
//! its left neighbour; a point that fails falls back to continuation. Blocks
//! are fixed in size so results do not depend on the thread count.

use crate::error::{domain, validation, Error, Result};
use crate::measure::{Grid, SpectralMeasure, DEFAULT_GRID_POINTS};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Grid points per warm-start chain.
const BLOCK: usize = 64;
/// Maximal number of η bisections in one continuation step.
const MAX_SPLITS: u32 = 12;
/// Default inversion offset relative to the half-width of the grid.
pub const DEFAULT_RELATIVE_ETA: f64 = 1e-6;
/// Relative mass deficit below which the density is rescaled uniformly.
const UNIFORM_RESCALE_LIMIT: f64 = 1e-4;

/// Evaluation grid: a number of points and an optional explicit range.
/// Without a range the grid spans the predicted support padded by 10%.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: DEFAULT_GRID_POINTS,
            range: None,
        }
    }
}

impl GridSpec {
    pub fn with_points(points: usize) -> Self {
        GridSpec {
            points,
            range: None,
        }
    }

    pub fn resolve(&self, lo: f64, hi: f64) -> Result<Grid> {
        if self.points < 16 {
            return validation(format!(
                "grid needs at least 16 points, got {}",
                self.points
            ));
        }
        match self.range {
            Some((a, b)) => Grid::spanning(a, b, self.points),
            None => {
                let (lo, hi) = if hi > lo {
                    (lo, hi)
                } else {
                    (lo - 0.5, lo + 0.5)
                };
                Grid::padded(lo, hi, self.points)
            }
        }
    }
}

/// Solver settings for the MP map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpMapConfig {
    /// Inversion offset; `None` uses [`DEFAULT_RELATIVE_ETA`] times the
    /// half-width of the grid.
    pub eta: Option<f64>,
    pub grid: GridSpec,
    /// Fixed-point tolerance on `|s - F(s)| / max(1, |s|)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Damping of the Picard fallback.
    pub damping: f64,
}

impl Default for MpMapConfig {
    fn default() -> Self {
        MpMapConfig {
            eta: None,
            grid: GridSpec::default(),
            tol: 1e-10,
            max_iters: 100,
            damping: 0.5,
        }
    }
}

impl MpMapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return validation("fixed-point tolerance must be positive");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return validation("damping must lie in (0, 1]");
        }
        if self.max_iters == 0 {
            return validation("max_iters must be at least 1");
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return validation("eta must be positive");
            }
        }
        Ok(())
    }
}

/// Per-solve diagnostics, serialized into report sidecars.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub eta: f64,
    pub points: usize,
    pub failed_points: usize,
    pub worst_residual: f64,
    pub mean_iterations: f64,
    pub continuation_restarts: usize,
    /// Atom at zero predicted analytically.
    pub atom_at_zero: f64,
    /// Mass of the continuous part before normalization.
    pub raw_continuous_mass: f64,
    /// Whether the deficit was spread uniformly or placed at a singular node.
    pub normalization: String,
}

/// `MP^γ` with the closed-form density on a padded grid.
pub fn mp_measure(gamma: f64) -> Result<SpectralMeasure> {
    mp_measure_on(gamma, GridSpec::default())
}

/// `MP^γ` sampled on the given grid specification.
pub fn mp_measure_on(gamma: f64, spec: GridSpec) -> Result<SpectralMeasure> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return domain(format!("MP ratio must be positive, got {gamma}"));
    }
    let lo = (1.0 - gamma.sqrt()).powi(2);
    let hi = (1.0 + gamma.sqrt()).powi(2);
    let grid = spec.resolve(if gamma >= 1.0 { 0.0 } else { lo }, hi)?;
    let atom = if gamma > 1.0 { 1.0 - 1.0 / gamma } else { 0.0 };
    let density: Vec<f64> = grid
        .points()
        .iter()
        .map(|&x| {
            if x <= lo.max(0.0) || x >= hi {
                0.0
            } else {
                ((hi - x) * (x - lo)).sqrt() / (2.0 * PI * gamma * x)
            }
        })
        .collect();
    let mass: f64 = trapezoid(&density, grid.step);
    let scale = (1.0 - atom) / mass;
    let density = density.into_iter().map(|v| v * scale).collect();
    let atoms = if atom > 0.0 {
        vec![(0.0, atom)]
    } else {
        Vec::new()
    };
    SpectralMeasure::new(atoms, grid, density)
}

fn trapezoid(d: &[f64], h: f64) -> f64 {
    if d.len() < 2 {
        return 0.0;
    }
    h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]))
}

/// The fixed-point problem `s = F(s)` at a point `z`.
trait FixedPoint: Sync {
    /// `F(s)` and `F'(s)`.
    fn eval(&self, z: Complex64, s: Complex64) -> (Complex64, Complex64);
    /// Whether `s` lies on the physical branch.
    fn admissible(&self, z: Complex64, s: Complex64) -> bool;
}

/// Sample-covariance form: `s = ∫ dν(t) / (t(1 - γ - γ z s) - z)`.
struct CovarianceMap<'a> {
    nu: &'a SpectralMeasure,
    gamma: f64,
}

impl FixedPoint for CovarianceMap<'_> {
    fn eval(&self, z: Complex64, s: Complex64) -> (Complex64, Complex64) {
        let g = self.gamma;
        let a = 1.0 - g - g * z * s;
        let zeta = z / a;
        let (st, dst) = self.nu.stieltjes_and_derivative(zeta);
        let f = st / a;
        let df = g * z * st / (a * a) + g * z * z * dst / (a * a * a);
        (f, df)
    }

    fn admissible(&self, z: Complex64, s: Complex64) -> bool {
        // Both s and the companion transform are Herglotz.
        let companion = -(1.0 - self.gamma) / z + self.gamma * s;
        s.im >= 0.0 && companion.im >= -1e-12 * companion.norm().max(1.0)
    }
}

/// Gram form: `m = 1 / (-z + ∫ t dπ(t) / (1 + γ t m))`, written through
/// `ζ = -1/(γ m)` as `m = 1 / (-z - ζ - ζ² S_π(ζ))`.
struct GramMap<'a> {
    pi: &'a SpectralMeasure,
    gamma: f64,
}

impl FixedPoint for GramMap<'_> {
    fn eval(&self, z: Complex64, m: Complex64) -> (Complex64, Complex64) {
        let zeta = -1.0 / (self.gamma * m);
        let (st, dst) = self.pi.stieltjes_and_derivative(zeta);
        let t = zeta + zeta * zeta * st;
        let dt = 1.0 + 2.0 * zeta * st + zeta * zeta * dst;
        let f = 1.0 / (-z - t);
        let dzeta = 1.0 / (self.gamma * m * m);
        (f, f * f * dt * dzeta)
    }

    fn admissible(&self, _z: Complex64, m: Complex64) -> bool {
        m.im >= 0.0
    }
}

struct PointSolution {
    s: Complex64,
    residual: f64,
    iterations: usize,
    ok: bool,
}

struct Solver<'a, M: FixedPoint> {
    map: &'a M,
    tol: f64,
    max_iters: usize,
    damping: f64,
}

impl<M: FixedPoint> Solver<'_, M> {
    fn residual(&self, z: Complex64, s: Complex64) -> f64 {
        let (f, _) = self.map.eval(z, s);
        (s - f).norm() / s.norm().max(1.0)
    }

    /// Newton on `s - F(s)`, step-halving to stay in the upper half plane.
    fn newton(&self, z: Complex64, mut s: Complex64) -> PointSolution {
        let mut iterations = 0;
        for _ in 0..self.max_iters {
            iterations += 1;
            let (f, df) = self.map.eval(z, s);
            let r = s - f;
            let res = r.norm() / s.norm().max(1.0);
            if !res.is_finite() {
                break;
            }
            if res <= self.tol {
                let ok = self.map.admissible(z, s);
                return PointSolution {
                    s,
                    residual: res,
                    iterations,
                    ok,
                };
            }
            let mut step = r / (1.0 - df);
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            let mut next = s - step;
            let mut halvings = 0;
            while next.im <= 0.0 && halvings < 40 {
                step *= 0.5;
                next = s - step;
                halvings += 1;
            }
            s = next;
        }
        let residual = self.residual(z, s);
        PointSolution {
            s,
            residual,
            iterations,
            ok: false,
        }
    }

    /// Damped Picard iteration followed by a Newton polish.
    fn picard(&self, z: Complex64, mut s: Complex64) -> PointSolution {
        let mut iterations = 0;
        for _ in 0..self.max_iters * 20 {
            iterations += 1;
            let (f, _) = self.map.eval(z, s);
            let next = (1.0 - self.damping) * s + self.damping * f;
            if !next.re.is_finite() || !next.im.is_finite() {
                break;
            }
            let done = (next - s).norm() <= self.tol * next.norm().max(1.0);
            s = next;
            if done {
                break;
            }
        }
        let mut polished = self.newton(z, s);
        polished.iterations += iterations;
        polished
    }

    /// Solve at height `eta_to` starting from a solution at `eta_from`,
    /// bisecting the step in log-η when Newton fails.
    fn continue_to(
        &self,
        x: f64,
        eta_from: f64,
        s_from: Complex64,
        eta_to: f64,
        depth: u32,
    ) -> PointSolution {
        let z = Complex64::new(x, eta_to);
        let sol = self.newton(z, s_from);
        if sol.ok || depth >= MAX_SPLITS {
            return sol;
        }
        let mid = (eta_from * eta_to).sqrt();
        let first = self.continue_to(x, eta_from, s_from, mid, depth + 1);
        if !first.ok {
            return first;
        }
        let mut second = self.continue_to(x, mid, first.s, eta_to, depth + 1);
        second.iterations += first.iterations + sol.iterations;
        second
    }

    /// Full continuation from far above the axis down to `eta`.
    fn from_above(&self, x: f64, eta: f64, eta_top: f64) -> PointSolution {
        let z_top = Complex64::new(x, eta_top);
        let top = self.picard(z_top, -1.0 / z_top);
        if !top.ok {
            return top;
        }
        let mut sol = top;
        let mut level = eta_top;
        let mut iterations = sol.iterations;
        while level > eta {
            let next = (level / 10.0).max(eta);
            sol = self.continue_to(x, level, sol.s, next, 0);
            iterations += sol.iterations;
            if !sol.ok {
                break;
            }
            level = next;
        }
        sol.iterations = iterations;
        sol
    }
}

/// Solve the fixed point on every grid abscissa at height `eta`, returning
/// `Im s / π` per point together with diagnostics.
fn solve_grid<M: FixedPoint>(
    map: &M,
    grid: Grid,
    eta: f64,
    cfg: &MpMapConfig,
) -> Result<(Vec<f64>, SolverDiagnostics)> {
    let solver = Solver {
        map,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        damping: cfg.damping,
    };
    let xs = grid.points();
    let eta_top = (grid.end() - grid.start).max(1.0);
    let blocks: Vec<Vec<(PointSolution, bool)>> = xs
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut out: Vec<(PointSolution, bool)> = Vec::with_capacity(chunk.len());
            for &x in chunk {
                let warm = out.last().filter(|(p, _)| p.ok).map(|(p, _)| p.s);
                let mut restarted = false;
                let mut sol = match warm {
                    Some(s) => solver.newton(Complex64::new(x, eta), s),
                    None => solver.from_above(x, eta, eta_top),
                };
                if !sol.ok && warm.is_some() {
                    restarted = true;
                    sol = solver.from_above(x, eta, eta_top);
                }
                out.push((sol, restarted));
            }
            out
        })
        .collect();

    let mut values = Vec::with_capacity(xs.len());
    let mut diag = SolverDiagnostics {
        eta,
        points: xs.len(),
        ..Default::default()
    };
    let mut total_iters = 0usize;
    let mut worst_failed = 0.0f64;
    for (sol, restarted) in blocks.into_iter().flatten() {
        total_iters += sol.iterations;
        if restarted {
            diag.continuation_restarts += 1;
        }
        if sol.ok {
            diag.worst_residual = diag.worst_residual.max(sol.residual);
            values.push(Some(sol.s.im / PI));
        } else {
            diag.failed_points += 1;
            let r = if sol.residual.is_finite() {
                sol.residual
            } else {
                f64::INFINITY
            };
            worst_failed = worst_failed.max(r);
            values.push(None);
        }
    }
    diag.mean_iterations = total_iters as f64 / xs.len().max(1) as f64;
    if diag.failed_points * 100 > xs.len() {
        return Err(Error::Solver {
            message: format!(
                "fixed point did not converge at {} of {} grid points",
                diag.failed_points,
                xs.len()
            ),
            worst_residual: worst_failed,
        });
    }
    Ok((fill_gaps(values), diag))
}

/// Replace failed points by linear interpolation between their neighbours.
fn fill_gaps(values: Vec<Option<f64>>) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = match values[i] {
            Some(v) => v,
            None => {
                let left = (0..i).rev().find_map(|j| values[j].map(|v| (j, v)));
                let right = (i + 1..n).find_map(|j| values[j].map(|v| (j, v)));
                match (left, right) {
                    (Some((a, va)), Some((b, vb))) => {
                        let t = (i - a) as f64 / (b - a) as f64;
                        va + t * (vb - va)
                    }
                    (Some((_, v)), None) | (None, Some((_, v))) => v,
                    (None, None) => 0.0,
                }
            }
        };
    }
    out
}

/// Turn `Im s / π` samples into a measure with an analytic atom at zero:
/// the atom's Lorentzian is removed, negatives and the leakage below zero
/// are clipped and the density is normalized to `1 - atom`.
fn assemble(
    grid: Grid,
    raw: Vec<f64>,
    eta: f64,
    atom: f64,
    diag: &mut SolverDiagnostics,
) -> Result<SpectralMeasure> {
    diag.atom_at_zero = atom;
    let xs = grid.points();
    let mut density: Vec<f64> = raw
        .iter()
        .zip(&xs)
        .map(|(&v, &x)| {
            // Inputs live on [0, ∞), so anything at x < 0 is inversion leakage.
            if x < 0.0 {
                0.0
            } else {
                (v - atom * eta / (PI * (x * x + eta * eta))).max(0.0)
            }
        })
        .collect();
    let target = 1.0 - atom;
    let mass = trapezoid(&density, grid.step);
    diag.raw_continuous_mass = mass;
    let atoms = if atom > 0.0 {
        vec![(0.0, atom)]
    } else {
        Vec::new()
    };
    if target <= 1e-12 || mass <= 0.0 {
        diag.normalization = "atomic".into();
        return SpectralMeasure::normalized(atoms, Grid::EMPTY, Vec::new());
    }
    let deficit = target - mass;
    if deficit.abs() <= UNIFORM_RESCALE_LIMIT * target || !lump_deficit(&mut density, grid, deficit)
    {
        diag.normalization = "uniform".into();
        let scale = target / mass;
        for v in &mut density {
            *v *= scale;
        }
    } else {
        diag.normalization = "singular_node".into();
    }
    SpectralMeasure::normalized(atoms, grid, density)
}

/// Put a mass deficit at the interior node with the largest second
/// difference, where an integrable edge singularity defeats the trapezoid
/// rule. Returns false if that would make the density negative.
fn lump_deficit(density: &mut [f64], grid: Grid, deficit: f64) -> bool {
    let n = density.len();
    if n < 3 {
        return false;
    }
    let k = (1..n - 1)
        .max_by(|&a, &b| {
            let da = (density[a - 1] - 2.0 * density[a] + density[a + 1]).abs();
            let db = (density[b - 1] - 2.0 * density[b] + density[b + 1]).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    let value = density[k] + deficit / grid.step;
    if value < 0.0 {
        return false;
    }
    density[k] = value;
    true
}

fn check_nonnegative_support(nu: &SpectralMeasure, what: &str) -> Result<()> {
    let (lo, hi) = nu.support();
    if lo < -1e-12 {
        return validation(format!(
            "{what} must be supported on [0, ∞), support starts at {lo}"
        ));
    }
    if !hi.is_finite() {
        return validation(format!("{what} must have bounded support"));
    }
    let mass = nu.total_mass();
    if (mass - 1.0).abs() > crate::measure::MASS_TOL {
        return validation(format!("{what} is not normalized (mass {mass})"));
    }
    Ok(())
}

fn resolve_eta(cfg: &MpMapConfig, grid: Grid) -> f64 {
    cfg.eta
        .unwrap_or(DEFAULT_RELATIVE_ETA * 0.5 * (grid.end() - grid.start))
}

/// `MP^γ ⊠ ν`: limiting spectrum of sample covariance matrices with
/// population law `ν` and feature-to-sample ratio `γ`.
pub fn mp_map(nu: &SpectralMeasure, gamma: f64, cfg: &MpMapConfig) -> Result<SpectralMeasure> {
    mp_map_with_diagnostics(nu, gamma, cfg).map(|(m, _)| m)
}

pub fn mp_map_with_diagnostics(
    nu: &SpectralMeasure,
    gamma: f64,
    cfg: &MpMapConfig,
) -> Result<(SpectralMeasure, SolverDiagnostics)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return domain(format!("MP ratio must be positive, got {gamma}"));
    }
    cfg.validate()?;
    check_nonnegative_support(nu, "population law")?;
    let nu0 = nu.atom_at(0.0);
    let atom = nu0.max(1.0 - 1.0 / gamma);
    if atom >= 1.0 - 1e-12 {
        return Ok((SpectralMeasure::dirac(0.0), SolverDiagnostics::default()));
    }
    let (lo, hi) = positive_support(nu);
    let r = gamma.sqrt();
    let lower = if gamma < 1.0 && nu0 == 0.0 {
        lo * (1.0 - r).powi(2)
    } else {
        0.0
    };
    let grid = cfg.grid.resolve(lower, hi * (1.0 + r).powi(2))?;
    let eta = resolve_eta(cfg, grid);
    let map = CovarianceMap { nu, gamma };
    let (raw, mut diag) = solve_grid(&map, grid, eta, cfg)?;
    let m = assemble(grid, raw, eta, atom, &mut diag)?;
    Ok((m, diag))
}

/// Law of the eigenvalues of an `n × n` Gram matrix `Z Σ Zᵀ / N` with
/// `Σ ~ π`, `n / N → γ`. Its nonzero part is `γ`-scaled `MP^{1/γ} ⊠ π`.
pub fn gram_map(pi: &SpectralMeasure, gamma: f64, cfg: &MpMapConfig) -> Result<SpectralMeasure> {
    gram_map_with_diagnostics(pi, gamma, cfg).map(|(m, _)| m)
}

pub fn gram_map_with_diagnostics(
    pi: &SpectralMeasure,
    gamma: f64,
    cfg: &MpMapConfig,
) -> Result<(SpectralMeasure, SolverDiagnostics)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return domain(format!("Gram ratio must be positive, got {gamma}"));
    }
    cfg.validate()?;
    check_nonnegative_support(pi, "tensor law")?;
    let pi0 = pi.atom_at(0.0);
    let atom = (1.0 - (1.0 - pi0) / gamma).max(0.0);
    if pi0 >= 1.0 - 1e-12 {
        return Ok((SpectralMeasure::dirac(0.0), SolverDiagnostics::default()));
    }
    let (lo, hi) = positive_support(pi);
    let r = gamma.sqrt();
    let lower = if gamma < 1.0 && pi0 == 0.0 {
        lo * (1.0 - r).powi(2)
    } else {
        0.0
    };
    let grid = cfg.grid.resolve(lower, hi * (1.0 + r).powi(2))?;
    let eta = resolve_eta(cfg, grid);
    let map = GramMap { pi, gamma };
    let (raw, mut diag) = solve_grid(&map, grid, eta, cfg)?;
    let m = assemble(grid, raw, eta, atom, &mut diag)?;
    Ok((m, diag))
}

/// Support of the part of `nu` away from zero.
fn positive_support(nu: &SpectralMeasure) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &(x, m) in nu.atoms() {
        if x > 1e-12 && m > 0.0 {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    let d = nu.density();
    if let Some(first) = d.iter().position(|&v| v > 0.0) {
        let last = d.iter().rposition(|&v| v > 0.0).unwrap();
        let g = nu.grid();
        lo = lo.min(g.x(first.saturating_sub(1)).max(0.0));
        hi = hi.max(g.x((last + 1).min(g.n - 1)));
    }
    if !lo.is_finite() {
        lo = 0.0;
    }
    (lo, hi)
}
