//! Probability measures on the real line.
//!
//! A [`SpectralMeasure`] is a finite list of atoms plus an absolutely
//! continuous part given by density samples on a uniform grid. Between grid
//! nodes the density is linear; outside the grid it is zero. All integrals
//! (mass, CDF, Stieltjes transform, moments) are exact for that
//! piecewise-linear interpretation, so the trapezoid rule gives the mass.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, validation, Error, Result};
use crate::quadrature;

/// A point of the complex plane used as a Stieltjes evaluation point.
pub type ComplexPoint = Complex64;

/// Tolerance on total mass for a normalized measure.
pub const MASS_TOL: f64 = 1e-6;
/// Atoms closer than this are merged; lighter atoms are dropped.
pub const ATOM_TOL: f64 = 1e-12;
/// Default number of grid points for constructed densities.
pub const DEFAULT_GRID_POINTS: usize = 4096;
/// Density values above this negative threshold are clipped to zero.
const CLIP_TOL: f64 = 1e-9;

/// Uniform grid `start, start + step, ..., start + (n-1) step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl Grid {
    /// The empty grid, used by purely atomic measures.
    pub const EMPTY: Grid = Grid {
        start: 0.0,
        step: 1.0,
        n: 0,
    };

    pub fn new(start: f64, step: f64, n: usize) -> Result<Grid> {
        if !start.is_finite() || !step.is_finite() || step <= 0.0 {
            return validation(format!("invalid grid start={start} step={step}"));
        }
        if n == 1 {
            return validation("a density grid needs at least two points");
        }
        Ok(Grid { start, step, n })
    }

    /// `n` points from `lo` to `hi` inclusive.
    pub fn spanning(lo: f64, hi: f64, n: usize) -> Result<Grid> {
        if !(hi > lo) || n < 2 {
            return validation(format!("cannot span [{lo}, {hi}] with {n} points"));
        }
        Grid::new(lo, (hi - lo) / (n - 1) as f64, n)
    }

    /// Grid over `[lo, hi]` widened by 10% of its length on both sides.
    pub fn padded(lo: f64, hi: f64, n: usize) -> Result<Grid> {
        let width = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
        Grid::spanning(lo - 0.1 * width, hi + 0.1 * width, n)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.x(self.n.saturating_sub(1))
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    atoms: Vec<(f64, f64)>,
    grid: Grid,
    density: Vec<f64>,
}

impl TryFrom<RawMeasure> for SpectralMeasure {
    type Error = Error;
    fn try_from(raw: RawMeasure) -> Result<Self> {
        SpectralMeasure::new(raw.atoms, raw.grid, raw.density)
    }
}

/// Probability measure: atoms plus a gridded piecewise-linear density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct SpectralMeasure {
    atoms: Vec<(f64, f64)>,
    grid: Grid,
    density: Vec<f64>,
}

fn trapezoid(density: &[f64], step: f64) -> f64 {
    if density.len() < 2 {
        return 0.0;
    }
    let inner: f64 = density.iter().sum();
    step * (inner - 0.5 * (density[0] + density[density.len() - 1]))
}

/// Sort atoms, merge those within [`ATOM_TOL`] and drop negligible masses.
fn tidy_atoms(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (x, m) in atoms {
        match out.last_mut() {
            Some(last) if (x - last.0).abs() <= ATOM_TOL * last.0.abs().max(1.0) => {
                let total = last.1 + m;
                if total > 0.0 {
                    last.0 = (last.0 * last.1 + x * m) / total;
                }
                last.1 = total;
            }
            _ => out.push((x, m)),
        }
    }
    out.retain(|&(_, m)| m >= ATOM_TOL);
    out
}

impl SpectralMeasure {
    /// Validated constructor. Atoms are merged, small negative density
    /// ringing is clipped, and the total mass must be within [`MASS_TOL`]
    /// of one after dropped atoms are renormalized away.
    pub fn new(atoms: Vec<(f64, f64)>, grid: Grid, density: Vec<f64>) -> Result<Self> {
        let before: f64 = atoms.iter().map(|a| a.1).sum();
        let m = Self::assemble(atoms, grid, density)?;
        let mass = m.total_mass();
        let dropped = before - m.atom_mass();
        if (mass + dropped - 1.0).abs() > MASS_TOL {
            return validation(format!("measure has total mass {mass}, expected 1"));
        }
        if dropped != 0.0 {
            return Ok(m.rescaled(1.0 / mass));
        }
        Ok(m)
    }

    /// Like [`SpectralMeasure::new`] but rescales to unit mass first.
    pub fn normalized(atoms: Vec<(f64, f64)>, grid: Grid, density: Vec<f64>) -> Result<Self> {
        let m = Self::assemble(atoms, grid, density)?;
        let mass = m.total_mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return validation(format!("cannot normalize a measure of mass {mass}"));
        }
        Ok(m.rescaled(1.0 / mass))
    }

    fn assemble(atoms: Vec<(f64, f64)>, grid: Grid, mut density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.n {
            return validation(format!(
                "density has {} values but grid has {} points",
                density.len(),
                grid.n
            ));
        }
        if grid.n > 0 {
            Grid::new(grid.start, grid.step, grid.n)?;
        }
        for &(x, m) in &atoms {
            if !x.is_finite() || !m.is_finite() {
                return validation("non-finite atom");
            }
            if m < -ATOM_TOL {
                return validation(format!("negative atom mass {m} at {x}"));
            }
        }
        for v in density.iter_mut() {
            if !v.is_finite() {
                return validation("non-finite density value");
            }
            if *v < 0.0 {
                if *v < -CLIP_TOL {
                    return validation(format!("negative density value {v}"));
                }
                *v = 0.0;
            }
        }
        let (grid, density) = if density.iter().all(|&v| v == 0.0) {
            (Grid::EMPTY, Vec::new())
        } else {
            (grid, density)
        };
        Ok(SpectralMeasure {
            atoms: tidy_atoms(atoms),
            grid,
            density,
        })
    }

    fn rescaled(mut self, factor: f64) -> Self {
        if factor != 1.0 {
            for a in &mut self.atoms {
                a.1 *= factor;
            }
            for v in &mut self.density {
                *v *= factor;
            }
        }
        self
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Self {
        SpectralMeasure {
            atoms: vec![(x, 1.0)],
            grid: Grid::EMPTY,
            density: Vec::new(),
        }
    }

    /// Purely atomic measure; masses must sum to one.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms, Grid::EMPTY, Vec::new())
    }

    /// Empirical measure of a sample: one atom of mass `1/len` per value.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return validation("empirical measure of an empty sample");
        }
        let w = 1.0 / samples.len() as f64;
        Self::normalized(
            samples.iter().map(|&x| (x, w)).collect(),
            Grid::EMPTY,
            Vec::new(),
        )
    }

    /// Continuous measure from a density function sampled on `grid`,
    /// normalized to unit mass.
    pub fn from_density_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let density: Vec<f64> = grid.points().into_iter().map(f).collect();
        if density.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(
                "density function returned a non-finite value".into(),
            ));
        }
        Self::normalized(Vec::new(), grid, density)
    }

    /// Uniform law on `[a, b]`.
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        let grid = Grid::spanning(a, b, 257)?;
        Self::normalized(Vec::new(), grid, vec![1.0; 257])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).fold(0.0, |acc, m| acc + m)
    }

    pub fn continuous_mass(&self) -> f64 {
        trapezoid(&self.density, self.grid.step)
    }

    pub fn total_mass(&self) -> f64 {
        self.atom_mass() + self.continuous_mass()
    }

    /// Mass of the atom at `x` (within [`ATOM_TOL`]), zero if none.
    pub fn atom_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| (a.0 - x).abs() <= ATOM_TOL * x.abs().max(1.0))
            .map(|a| a.1)
            .fold(0.0, |acc, m| acc + m)
    }

    /// True when the measure has no density part.
    pub fn is_atomic(&self) -> bool {
        self.density.is_empty()
    }

    /// Density at `x` (linear interpolation, zero off the grid).
    pub fn density_at(&self, x: f64) -> f64 {
        interp(&self.density, self.grid, x)
    }

    /// Smallest closed interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(x, _) in &self.atoms {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if let Some(first) = self.density.iter().position(|&v| v > 0.0) {
            let last = self.density.iter().rposition(|&v| v > 0.0).unwrap();
            lo = lo.min(self.grid.x(first.saturating_sub(1)));
            hi = hi.max(self.grid.x((last + 1).min(self.grid.n - 1)));
        }
        (lo, hi)
    }

    /// Continuous part rescaled to unit mass, if it has any mass.
    pub fn continuous_part(&self) -> Option<SpectralMeasure> {
        let m = self.continuous_mass();
        if m <= 0.0 {
            return None;
        }
        Some(SpectralMeasure {
            atoms: Vec::new(),
            grid: self.grid,
            density: self.density.iter().map(|v| v / m).collect(),
        })
    }

    /// Stieltjes transform `s(z) = ∫ dμ(t) / (t - z)` for `Im z > 0`.
    pub fn stieltjes(&self, z: ComplexPoint) -> Result<Complex64> {
        if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return domain(format!(
                "Stieltjes point must lie in the upper half plane, got {z}"
            ));
        }
        let mass = self.total_mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return validation(format!("measure is not normalized (mass {mass})"));
        }
        Ok(self.stieltjes_unchecked(z))
    }

    /// Stieltjes transform at any point off the support (no checks).
    pub fn stieltjes_unchecked(&self, z: Complex64) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for &(x, m) in &self.atoms {
            s += m / (x - z);
        }
        if self.density.len() >= 2 {
            let h = self.grid.step;
            let mut below = self.grid.start - z;
            for k in 0..self.density.len() - 1 {
                let above = self.grid.x(k + 1) - z;
                let rho = self.density[k];
                let slope = (self.density[k + 1] - rho) / h;
                if rho != 0.0 || slope != 0.0 {
                    let u = h / below;
                    if u.norm() < 1e-3 {
                        let (l, frac) = small_log_terms(u);
                        s += rho * l + slope * h * frac;
                    } else {
                        let l = (above / below).ln();
                        s += (rho - slope * below) * l + slope * h;
                    }
                }
                below = above;
            }
        }
        s
    }

    /// Stieltjes transform and its derivative with respect to `z`.
    pub fn stieltjes_and_derivative(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut s = Complex64::new(0.0, 0.0);
        let mut ds = Complex64::new(0.0, 0.0);
        for &(x, m) in &self.atoms {
            let r = 1.0 / (x - z);
            s += m * r;
            ds += m * r * r;
        }
        if self.density.len() >= 2 {
            let h = self.grid.step;
            let mut below = self.grid.start - z;
            for k in 0..self.density.len() - 1 {
                let above = self.grid.x(k + 1) - z;
                let rho = self.density[k];
                let slope = (self.density[k + 1] - rho) / h;
                if rho != 0.0 || slope != 0.0 {
                    let u = h / below;
                    let coef = rho - slope * below;
                    let l = if u.norm() < 1e-3 {
                        let (l, frac) = small_log_terms(u);
                        s += rho * l + slope * h * frac;
                        l
                    } else {
                        let l = (above / below).ln();
                        s += coef * l + slope * h;
                        l
                    };
                    ds += slope * l + coef * (1.0 / below - 1.0 / above);
                }
                below = above;
            }
        }
        (s, ds)
    }

    /// Right-continuous cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        CdfTable::new(self).cdf(x)
    }

    /// Generalized inverse `inf { x : F(x) >= q }`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return domain(format!("quantile level {q} outside [0, 1]"));
        }
        let table = CdfTable::new(self);
        let (lo, hi) = self.support();
        if q <= 0.0 {
            return Ok(lo);
        }
        let mut points = table.breakpoints();
        points.retain(|x| x.is_finite());
        if points.is_empty() {
            return Ok(lo);
        }
        let target = q.min(table.total);
        let idx = points.partition_point(|&x| table.cdf(x) < target - 1e-15);
        if idx >= points.len() {
            return Ok(hi);
        }
        let b = points[idx];
        if idx == 0 || table.cdf_left(b) < target - 1e-15 {
            return Ok(b);
        }
        let (mut a, mut b) = (points[idx - 1], b);
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if table.cdf(mid) >= target - 1e-15 {
                b = mid;
            } else {
                a = mid;
            }
        }
        Ok(b)
    }

    /// Raw moment `∫ t^k dμ(t)`.
    pub fn moment(&self, k: u32) -> f64 {
        let mut acc: f64 = self
            .atoms
            .iter()
            .map(|&(x, m)| m * x.powi(k as i32))
            .fold(0.0, |acc, v| acc + v);
        if self.density.len() >= 2 {
            let base = quadrature::gauss_legendre(k as usize / 2 + 2);
            let h = self.grid.step;
            for c in 0..self.density.len() - 1 {
                let (r0, r1) = (self.density[c], self.density[c + 1]);
                if r0 == 0.0 && r1 == 0.0 {
                    continue;
                }
                let a = self.grid.x(c);
                acc += base.integrate(|t| {
                    let s = 0.5 * (t + 1.0);
                    let x = a + s * h;
                    0.5 * h * (r0 + (r1 - r0) * s) * x.powi(k as i32)
                });
            }
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(2) - m * m
    }

    /// Resample the density onto `grid`, keeping atoms and continuous mass.
    pub fn resample(&self, grid: Grid) -> Result<SpectralMeasure> {
        if self.density.is_empty() {
            return Ok(self.clone());
        }
        if grid.n < 2 {
            return validation("resampling requires a grid with at least two points");
        }
        let old = self.continuous_mass();
        let mut density: Vec<f64> = grid.points().iter().map(|&x| self.density_at(x)).collect();
        let new = trapezoid(&density, grid.step);
        if !(new > 0.0) {
            return validation("resampling grid misses the density support");
        }
        for v in &mut density {
            *v *= old / new;
        }
        Self::new(self.atoms.clone(), grid, density)
    }

    /// Density of the measure convolved with a Cauchy law of scale `eta`,
    /// i.e. `Im s(x + i eta) / π`, sampled on `grid` and normalized.
    pub fn cauchy_smoothed(&self, eta: f64, grid: Grid) -> Result<SpectralMeasure> {
        if !(eta > 0.0) {
            return domain("smoothing scale must be positive");
        }
        let density: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| {
                (self.stieltjes_unchecked(Complex64::new(x, eta)).im / std::f64::consts::PI)
                    .max(0.0)
            })
            .collect();
        Self::normalized(Vec::new(), grid, density)
    }

    /// Gaussian kernel density estimate with the given bandwidth on `grid`.
    /// Atoms are replaced by Gaussian bumps; the density part is smoothed
    /// by treating each grid cell mass as a bump at its node.
    pub fn gaussian_smoothed(&self, bandwidth: f64, grid: Grid) -> Result<SpectralMeasure> {
        if !(bandwidth > 0.0) {
            return domain("bandwidth must be positive");
        }
        let mut points: Vec<(f64, f64)> = self.atoms.clone();
        if self.density.len() >= 2 {
            let h = self.grid.step;
            let last = self.density.len() - 1;
            for (k, &v) in self.density.iter().enumerate() {
                let w = if k == 0 || k == last { 0.5 } else { 1.0 };
                if v > 0.0 {
                    points.push((self.grid.x(k), w * h * v));
                }
            }
        }
        let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let density: Vec<f64> = grid
            .points()
            .iter()
            .map(|&x| {
                points
                    .iter()
                    .map(|&(c, m)| {
                        let t = (x - c) / bandwidth;
                        if t.abs() > 40.0 {
                            0.0
                        } else {
                            m * norm * (-0.5 * t * t).exp()
                        }
                    })
                    .sum()
            })
            .collect();
        Self::normalized(Vec::new(), grid, density)
    }

    /// JSON text in the `{"atoms":..,"grid":..,"density":..}` layout.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("measure serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV export: an `x,density` block, a blank line, then an
    /// `atom_x,atom_mass` block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,density\n");
        let mut buf = ryu::Buffer::new();
        for (k, &v) in self.density.iter().enumerate() {
            out.push_str(buf.format(self.grid.x(k)));
            out.push(',');
            out.push_str(buf.format(v));
            out.push('\n');
        }
        out.push_str("\natom_x,atom_mass\n");
        for &(x, m) in &self.atoms {
            out.push_str(buf.format(x));
            out.push(',');
            out.push_str(buf.format(m));
            out.push('\n');
        }
        out
    }
}

/// `log(1+u)` and `1 - log(1+u)/u` by their series for small `u`.
fn small_log_terms(u: Complex64) -> (Complex64, Complex64) {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    let l = u - u2 / 2.0 + u3 / 3.0 - u4 / 4.0 + u5 / 5.0;
    let frac = u / 2.0 - u2 / 3.0 + u3 / 4.0 - u4 / 5.0 + u5 / 6.0;
    (l, frac)
}

fn interp(density: &[f64], grid: Grid, x: f64) -> f64 {
    if density.len() < 2 {
        return 0.0;
    }
    let t = (x - grid.start) / grid.step;
    if t < 0.0 || t > (density.len() - 1) as f64 {
        return 0.0;
    }
    let k = (t.floor() as usize).min(density.len() - 2);
    let f = t - k as f64;
    density[k] * (1.0 - f) + density[k + 1] * f
}

/// Precomputed cumulative masses for fast CDF evaluation.
pub(crate) struct CdfTable<'a> {
    m: &'a SpectralMeasure,
    atom_cum: Vec<f64>,
    dens_cum: Vec<f64>,
    total: f64,
}

impl<'a> CdfTable<'a> {
    pub(crate) fn new(m: &'a SpectralMeasure) -> Self {
        let mut atom_cum = Vec::with_capacity(m.atoms.len());
        let mut acc = 0.0;
        for a in &m.atoms {
            acc += a.1;
            atom_cum.push(acc);
        }
        let mut dens_cum = Vec::with_capacity(m.density.len());
        let mut acc2 = 0.0;
        for k in 0..m.density.len() {
            if k > 0 {
                acc2 += 0.5 * m.grid.step * (m.density[k - 1] + m.density[k]);
            }
            dens_cum.push(acc2);
        }
        CdfTable {
            m,
            atom_cum,
            dens_cum,
            total: acc + acc2,
        }
    }

    fn density_cdf(&self, x: f64) -> f64 {
        let d = &self.m.density;
        if d.len() < 2 {
            return 0.0;
        }
        let g = self.m.grid;
        let t = (x - g.start) / g.step;
        if t <= 0.0 {
            return 0.0;
        }
        let last = d.len() - 1;
        if t >= last as f64 {
            return self.dens_cum[last];
        }
        let k = (t.floor() as usize).min(last - 1);
        let delta = x - g.x(k);
        let slope = (d[k + 1] - d[k]) / g.step;
        self.dens_cum[k] + d[k] * delta + 0.5 * slope * delta * delta
    }

    fn atoms_upto(&self, x: f64, inclusive: bool) -> f64 {
        let n = if inclusive {
            self.m.atoms.partition_point(|a| a.0 <= x)
        } else {
            self.m.atoms.partition_point(|a| a.0 < x)
        };
        if n == 0 {
            0.0
        } else {
            self.atom_cum[n - 1]
        }
    }

    pub(crate) fn cdf(&self, x: f64) -> f64 {
        self.atoms_upto(x, true) + self.density_cdf(x)
    }

    pub(crate) fn cdf_left(&self, x: f64) -> f64 {
        self.atoms_upto(x, false) + self.density_cdf(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.m.atoms.iter().map(|a| a.0).collect();
        pts.extend(self.m.grid.points());
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Integral of `|D(s)|` over `[0, 1]` for the quadratic through
/// `(0, d0), (1/2, dm), (1, d1)`, and its maximum absolute value.
fn abs_quadratic(d0: f64, dm: f64, d1: f64) -> (f64, f64) {
    let c = 2.0 * (d1 + d0 - 2.0 * dm);
    let b = d1 - d0 - c;
    let poly = |s: f64| d0 + s * (b + s * c);
    let anti = |s: f64| s * (d0 + s * (b / 2.0 + s * c / 3.0));
    let mut cuts = vec![0.0];
    if c.abs() > 1e-300 {
        let disc = b * b - 4.0 * c * d0;
        if disc > 0.0 {
            let r = disc.sqrt();
            let q = -0.5 * (b + b.signum() * r);
            let mut roots = vec![q / c];
            if q != 0.0 {
                roots.push(d0 / q);
            }
            roots.retain(|&s| s > 0.0 && s < 1.0);
            roots.sort_by(f64::total_cmp);
            cuts.extend(roots);
        }
    } else if b != 0.0 {
        let s = -d0 / b;
        if s > 0.0 && s < 1.0 {
            cuts.push(s);
        }
    }
    cuts.push(1.0);
    let integral = cuts
        .windows(2)
        .map(|w| (anti(w[1]) - anti(w[0])).abs())
        .sum();
    let mut max = d0.abs().max(d1.abs());
    if c.abs() > 1e-300 {
        let v = -b / (2.0 * c);
        if v > 0.0 && v < 1.0 {
            max = max.max(poly(v).abs());
        }
    }
    (integral, max)
}

/// Returns `(W1, KS)` computed exactly on the union of breakpoints.
fn cdf_distances(a: &SpectralMeasure, b: &SpectralMeasure) -> (f64, f64) {
    let ta = CdfTable::new(a);
    let tb = CdfTable::new(b);
    let mut pts = ta.breakpoints();
    pts.extend(tb.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut w1 = 0.0;
    let mut ks: f64 = 0.0;
    for w in pts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let xm = 0.5 * (x0 + x1);
        let d0 = ta.cdf(x0) - tb.cdf(x0);
        let dm = ta.cdf(xm) - tb.cdf(xm);
        let d1 = ta.cdf_left(x1) - tb.cdf_left(x1);
        let (int, max) = abs_quadratic(d0, dm, d1);
        w1 += int * (x1 - x0);
        ks = ks.max(max);
    }
    if let Some(&x) = pts.last() {
        ks = ks.max((ta.cdf(x) - tb.cdf(x)).abs());
    }
    if let Some(&x) = pts.first() {
        ks = ks.max((ta.cdf_left(x) - tb.cdf_left(x)).abs());
    }
    (w1, ks)
}

/// Kolmogorov–Smirnov distance `sup |F_A - F_B|`.
pub fn distance_ks(a: &SpectralMeasure, b: &SpectralMeasure) -> f64 {
    cdf_distances(a, b).1
}

/// Wasserstein-1 distance `∫ |F_A - F_B| dx`.
pub fn distance_w1(a: &SpectralMeasure, b: &SpectralMeasure) -> f64 {
    cdf_distances(a, b).0
}

/// Pushforward of `mu` under `t ↦ a t + b`.
pub fn affine(mu: &SpectralMeasure, a: f64, b: f64) -> SpectralMeasure {
    if a == 0.0 {
        return SpectralMeasure::dirac(b);
    }
    let atoms = tidy_atoms(mu.atoms.iter().map(|&(x, m)| (a * x + b, m)).collect());
    if mu.density.is_empty() {
        return SpectralMeasure {
            atoms,
            grid: Grid::EMPTY,
            density: Vec::new(),
        };
    }
    let g = mu.grid;
    let scale = 1.0 / a.abs();
    let (grid, density) = if a > 0.0 {
        (
            Grid {
                start: a * g.start + b,
                step: a * g.step,
                n: g.n,
            },
            mu.density.iter().map(|v| v * scale).collect(),
        )
    } else {
        (
            Grid {
                start: a * g.end() + b,
                step: -a * g.step,
                n: g.n,
            },
            mu.density.iter().rev().map(|v| v * scale).collect(),
        )
    };
    SpectralMeasure {
        atoms,
        grid,
        density,
    }
}

/// Union grid with the finest step among the given grids.
fn common_grid(grids: &[Grid]) -> Option<Grid> {
    let nonempty: Vec<&Grid> = grids.iter().filter(|g| g.n >= 2).collect();
    if nonempty.is_empty() {
        return None;
    }
    let step = nonempty
        .iter()
        .map(|g| g.step)
        .fold(f64::INFINITY, f64::min);
    let lo = nonempty
        .iter()
        .map(|g| g.start)
        .fold(f64::INFINITY, f64::min);
    let hi = nonempty
        .iter()
        .map(|g| g.end())
        .fold(f64::NEG_INFINITY, f64::max);
    let n = ((hi - lo) / step - 1e-9).ceil() as usize + 1;
    Some(Grid {
        start: lo,
        step,
        n: n.max(2),
    })
}

/// Samples of `density` (on `src`) on `dst`, rescaled to keep its mass.
fn resample_density(density: &[f64], src: Grid, dst: Grid) -> Vec<f64> {
    if src == dst {
        return density.to_vec();
    }
    let old = trapezoid(density, src.step);
    let mut out: Vec<f64> = dst
        .points()
        .iter()
        .map(|&x| interp(density, src, x))
        .collect();
    let new = trapezoid(&out, dst.step);
    if new > 0.0 {
        for v in &mut out {
            *v *= old / new;
        }
    }
    out
}

/// Convex combination `Σ w_i μ_i`.
pub fn mixture(weights: &[f64], mus: &[SpectralMeasure]) -> Result<SpectralMeasure> {
    if weights.len() != mus.len() || weights.is_empty() {
        return validation("mixture needs one weight per measure");
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return validation("mixture weights must be nonnegative");
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return validation(format!("mixture weights sum to {sum}, expected 1"));
    }
    Ok(combine(weights, mus))
}

/// Weighted sum without weight validation (weights assumed to give a
/// probability measure).
pub(crate) fn combine(weights: &[f64], mus: &[SpectralMeasure]) -> SpectralMeasure {
    let mut atoms = Vec::new();
    for (w, mu) in weights.iter().zip(mus) {
        atoms.extend(mu.atoms.iter().map(|&(x, m)| (x, w * m)));
    }
    let grids: Vec<Grid> = weights
        .iter()
        .zip(mus)
        .filter(|(w, _)| **w != 0.0)
        .map(|(_, mu)| mu.grid)
        .collect();
    let (grid, density) = match common_grid(&grids) {
        None => (Grid::EMPTY, Vec::new()),
        Some(grid) => {
            let mut acc = vec![0.0; grid.n];
            for (w, mu) in weights.iter().zip(mus) {
                if *w == 0.0 || mu.density.len() < 2 {
                    continue;
                }
                let part = resample_density(&mu.density, mu.grid, grid);
                for (a, v) in acc.iter_mut().zip(part) {
                    *a += w * v;
                }
            }
            for v in &mut acc {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            (grid, acc)
        }
    };
    let atoms = tidy_atoms(atoms);
    let (grid, density) = if density.iter().all(|&v| v == 0.0) {
        (Grid::EMPTY, Vec::new())
    } else {
        (grid, density)
    };
    SpectralMeasure {
        atoms,
        grid,
        density,
    }
}

/// Linear convolution of two sample vectors via a zero-padded FFT.
fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(size, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..len].iter().map(|c| c.re * scale).collect()
}

/// Law of `X + Y` for independent `X ~ mu1`, `Y ~ mu2`.
pub fn convolve_classical(mu1: &SpectralMeasure, mu2: &SpectralMeasure) -> Result<SpectralMeasure> {
    for mu in [mu1, mu2] {
        let mass = mu.total_mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return validation(format!("convolution input has mass {mass}"));
        }
    }
    if mu1.atoms.len() * mu2.atoms.len() > 4_000_000 {
        return validation("too many atom pairs for an exact convolution");
    }
    let mut atoms = Vec::with_capacity(mu1.atoms.len() * mu2.atoms.len());
    for &(x, m) in &mu1.atoms {
        for &(y, n) in &mu2.atoms {
            atoms.push((x + y, m * n));
        }
    }

    // Density pieces: (grid, samples, weight).
    let mut pieces: Vec<(Grid, Vec<f64>, f64)> = Vec::new();
    let shifted = |mu: &SpectralMeasure, shift: f64| Grid {
        start: mu.grid.start + shift,
        ..mu.grid
    };
    for &(x, m) in &mu1.atoms {
        if mu2.density.len() >= 2 {
            pieces.push((shifted(mu2, x), mu2.density.clone(), m));
        }
    }
    for &(y, n) in &mu2.atoms {
        if mu1.density.len() >= 2 {
            pieces.push((shifted(mu1, y), mu1.density.clone(), n));
        }
    }
    if mu1.density.len() >= 2 && mu2.density.len() >= 2 {
        let step = mu1.grid.step.min(mu2.grid.step);
        let on_step = |mu: &SpectralMeasure| {
            let n = ((mu.grid.end() - mu.grid.start) / step - 1e-9).ceil() as usize + 1;
            let g = Grid {
                start: mu.grid.start,
                step,
                n: n.max(2),
            };
            let mut d = resample_density(&mu.density, mu.grid, g);
            // Trapezoid end weights, so nonzero boundary values are not
            // double counted by the discrete convolution.
            let last = d.len() - 1;
            d[0] *= 0.5;
            d[last] *= 0.5;
            (g, d)
        };
        let (g1, d1) = on_step(mu1);
        let (g2, d2) = on_step(mu2);
        let conv: Vec<f64> = fft_convolve(&d1, &d2)
            .into_iter()
            .map(|v| v * step)
            .collect();
        let g = Grid {
            start: g1.start + g2.start,
            step,
            n: conv.len(),
        };
        pieces.push((g, conv, 1.0));
    }

    if pieces.is_empty() {
        return SpectralMeasure::new(atoms, Grid::EMPTY, Vec::new());
    }
    let grids: Vec<Grid> = pieces.iter().map(|p| p.0).collect();
    let grid = common_grid(&grids).expect("pieces have grids");
    let expected = 1.0 - atoms.iter().map(|a| a.1).sum::<f64>();
    let mut density = vec![0.0; grid.n];
    for (g, d, w) in &pieces {
        let part = resample_density(d, *g, grid);
        for (a, v) in density.iter_mut().zip(part) {
            *a += w * v;
        }
    }
    for v in &mut density {
        if *v < CLIP_TOL {
            *v = v.max(0.0);
        }
    }
    let got = trapezoid(&density, grid.step);
    if got > 0.0 && expected > 0.0 {
        for v in &mut density {
            *v *= expected / got;
        }
    }
    SpectralMeasure::new(atoms, grid, density)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs_quadratic_sign_change() {
        // D(s) = s - 1/2 has ∫|D| = 1/4 on [0, 1].
        let (i, m) = abs_quadratic(-0.5, 0.0, 0.5);
        assert!((i - 0.25).abs() < 1e-15);
        assert!((m - 0.5).abs() < 1e-15);
        // D(s) = (s - 1/2)^2 - 1/16 changes sign twice.
        let f = |s: f64| (s - 0.5) * (s - 0.5) - 1.0 / 16.0;
        let (i, _) = abs_quadratic(f(0.0), f(0.5), f(1.0));
        // Exact: ∫|f| = 1/12 + ... computed by fine sampling.
        let n = 200_000;
        let num: f64 = (0..n)
            .map(|k| f((k as f64 + 0.5) / n as f64).abs())
            .sum::<f64>()
            / n as f64;
        assert!((i - num).abs() < 1e-9);
    }

    #[test]
    fn small_series_matches_log() {
        let u = Complex64::new(3e-4, -2e-4);
        let (l, frac) = small_log_terms(u);
        let l_ref = (Complex64::new(1.0, 0.0) + u).ln();
        assert!((l - l_ref).norm() < 1e-15);
        assert!((frac - (1.0 - l_ref / u)).norm() < 1e-10);
    }
}
