//! General tensor limit `μ_{ν,φ}` through a finite free approximation.
//!
//! A replica draws `𝔇 = diag(D²)` with entries from `ν` and a Gaussian
//! `W̃ ∈ ℝ^{d_a × p_a}`, `d_a = round(p_a / γ₂)`, and forms
//!
//! ```text
//! Y = (α² / d_a) 𝔇^{1/2} W̃ᵀ W̃ 𝔇^{1/2},   X = β² 𝔇 + Y.
//! ```
//!
//! With `G = (X - w)⁻¹` and `M = (X - w)⊗(X - w) - Y⊗Y` the Stieltjes
//! transform of the tensor law is approximated by
//!
//! ```text
//! s(w) = (1/p_a) Tr G + (1/(d_a p_a)) Tr⊗Tr[(G⊗1)(Y⊗Y) M⁻¹].
//! ```
//!
//! The tensor trace is evaluated either exactly in the eigenbasis of
//! `A = G Y`, where it equals `Σ_ij c_i λ_j / (1 - λ_i λ_j)` with
//! `c_i = (V⁻¹ G A V)_ii`, or by Hutchinson probes with GMRES solves of the
//! `p_a² × p_a²` system.

use super::mp::GridSpec;
use crate::activation::ActivationStats;
use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::measure::{Grid, SpectralMeasure};
use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

type C = Complex64;
type CMatrix = DMatrix<C>;

/// Largest `p_a` handled by the dense strategy under [`Strategy::Auto`].
pub const AUTO_DENSE_LIMIT: usize = 48;
/// Smallest admissible approximation dimension.
pub const MIN_PA: usize = 32;

/// How the tensor trace is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Exact evaluation through the eigendecomposition of `G Y`.
    Dense,
    /// Hutchinson trace estimation with iterative solves.
    Stochastic,
    /// Dense for `p_a ≤ 48`, stochastic above.
    Auto,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "dense" => Ok(Strategy::Dense),
            "stochastic" => Ok(Strategy::Stochastic),
            "auto" => Ok(Strategy::Auto),
            _ => validation(format!("unknown strategy '{s}'")),
        }
    }

    fn resolve(self, pa: usize) -> Strategy {
        match self {
            Strategy::Auto if pa <= AUTO_DENSE_LIMIT => Strategy::Dense,
            Strategy::Auto => Strategy::Stochastic,
            s => s,
        }
    }
}

/// Settings of the finite free approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeApproxConfig {
    pub pa: usize,
    pub replicas: usize,
    /// Inversion offset `Im w`.
    pub eta: f64,
    pub strategy: Strategy,
    /// Hutchinson probes per point for the stochastic strategy.
    pub probes: usize,
    /// Relative residual target of the iterative solver.
    pub solver_tol: f64,
    pub seed: u64,
    pub grid: GridSpec,
}

impl Default for FreeApproxConfig {
    fn default() -> Self {
        FreeApproxConfig {
            pa: 64,
            replicas: 8,
            eta: 0.05,
            strategy: Strategy::Dense,
            probes: 64,
            solver_tol: 1e-8,
            seed: 0,
            grid: GridSpec::with_points(1024),
        }
    }
}

impl FreeApproxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pa < MIN_PA {
            return validation(format!("approximation dimension must be at least {MIN_PA}"));
        }
        if self.replicas == 0 {
            return validation("at least one replica is required");
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return validation("eta must be positive");
        }
        if self.probes == 0 {
            return validation("at least one probe is required");
        }
        if !(self.solver_tol > 0.0) {
            return validation("solver tolerance must be positive");
        }
        Ok(())
    }
}

/// One replica of the finite approximation: `D²` samples and `W̃`.
#[derive(Clone, Debug)]
pub struct FreeApprox {
    pub d2: Vec<f64>,
    /// `d_a × p_a` Gaussian matrix.
    pub w: DMatrix<f64>,
}

/// The matrices `X`, `Y = ZᵀZ` of a replica.
#[derive(Clone, Debug)]
pub struct Operators {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `(α / √d_a) W̃ 𝔇^{1/2}`, so that `Y = ZᵀZ`.
    pub z: DMatrix<f64>,
}

impl FreeApprox {
    /// Draw a replica: `D²` by inverse-CDF sampling of `ν`.
    pub fn sample(
        nu: &SpectralMeasure,
        gamma2: f64,
        pa: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(gamma2 > 0.0) {
            return validation("gamma2 must be positive");
        }
        let da = ((pa as f64 / gamma2).round() as usize).max(1);
        let mut d2 = Vec::with_capacity(pa);
        for _ in 0..pa {
            let u: f64 = rng.gen();
            d2.push(nu.quantile(u)?);
        }
        let w = DMatrix::from_fn(da, pa, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::from_parts(d2, w)
    }

    pub fn from_parts(d2: Vec<f64>, w: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != d2.len() || w.nrows() == 0 {
            return validation("W must have one column per D² entry");
        }
        if d2.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return validation("D² entries must be finite and nonnegative");
        }
        Ok(FreeApprox { d2, w })
    }

    pub fn pa(&self) -> usize {
        self.d2.len()
    }

    pub fn da(&self) -> usize {
        self.w.nrows()
    }

    pub fn operators(&self, alpha: f64, beta_sq: f64) -> Operators {
        let scale = alpha / (self.da() as f64).sqrt();
        let z = DMatrix::from_fn(self.da(), self.pa(), |i, j| {
            scale * self.w[(i, j)] * self.d2[j].sqrt()
        });
        let y = z.transpose() * &z;
        let mut x = y.clone();
        for (j, &v) in self.d2.iter().enumerate() {
            x[(j, j)] += beta_sq * v;
        }
        Operators { x, y, z }
    }
}

fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|v| C::new(v, 0.0))
}

fn shifted_inverse(x: &DMatrix<f64>, w: C) -> Result<CMatrix> {
    let mut m = to_complex(x);
    for i in 0..m.nrows() {
        m[(i, i)] -= w;
    }
    m.try_inverse()
        .ok_or_else(|| Error::Numerical(format!("X - w is singular at w = {w}")))
}

/// Eigenvalues and eigenvectors of a general complex matrix through the
/// Schur form `A = Q T Q*` and back substitution on `T`.
fn complex_eigen(a: CMatrix) -> Result<(Vec<C>, CMatrix)> {
    let n = a.nrows();
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok((vec![C::new(0.0, 0.0); n], CMatrix::identity(n, n)));
    }
    let schur = Schur::try_new(a, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("complex Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let lambda: Vec<C> = (0..n).map(|i| t[(i, i)]).collect();
    let tiny = 1e-14 * scale;
    let mut vt = CMatrix::zeros(n, n);
    for k in 0..n {
        vt[(k, k)] = C::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = C::new(0.0, 0.0);
            for j in i + 1..=k {
                acc += t[(i, j)] * vt[(j, k)];
            }
            let mut den = t[(i, i)] - lambda[k];
            if den.norm() < tiny {
                den = C::new(tiny, 0.0);
            }
            vt[(i, k)] = -acc / den;
        }
    }
    Ok((lambda, q * vt))
}

/// Exact tensor trace `Σ_ij c_i λ_j / (1 - λ_i λ_j)` with `λ` the spectrum
/// of `a` and `c = diag(V⁻¹ b V)`.
fn tensor_trace_exact(a: CMatrix, b: &CMatrix) -> Result<C> {
    let (lambda, v) = complex_eigen(a)?;
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvector matrix is singular".into()))?;
    let bv = b * &v;
    let n = lambda.len();
    let mut total = C::new(0.0, 0.0);
    for i in 0..n {
        let ci: C = (0..n).map(|k| vinv[(i, k)] * bv[(k, i)]).sum();
        let li = lambda[i];
        let inner: C = lambda.iter().map(|&lj| lj / (1.0 - li * lj)).sum();
        total += ci * inner;
    }
    Ok(total)
}

impl Operators {
    pub fn pa(&self) -> usize {
        self.x.nrows()
    }

    pub fn da(&self) -> usize {
        self.z.nrows()
    }

    /// `s(w)` with the exact dense evaluation of the tensor trace.
    pub fn stieltjes_dense(&self, w: C) -> Result<C> {
        let g = shifted_inverse(&self.x, w)?;
        let (pa, da) = (self.pa(), self.da());
        let tr_g: C = g.diagonal().iter().sum();
        let trace = if da < pa {
            // The d_a × d_a similar form avoids the p_a - d_a exact zeros.
            let z = to_complex(&self.z);
            let zg = &z * &g;
            let a = &zg * z.transpose();
            let b = &zg * &g * z.transpose();
            tensor_trace_exact(a, &b)?
        } else {
            let a = &g * to_complex(&self.y);
            let b = &g * &a;
            tensor_trace_exact(a, &b)?
        };
        Ok(tr_g / pa as f64 + trace / (da as f64 * pa as f64))
    }
}

/// Precomputed eigenbasis of `X` for the stochastic strategy.
pub struct StochasticOperators {
    lambda_x: Vec<f64>,
    /// `Y` in the eigenbasis of `X`.
    y_rot: DMatrix<f64>,
    da: usize,
}

impl StochasticOperators {
    pub fn new(ops: &Operators) -> Result<Self> {
        let (lambda_x, e) = linalg::sym_eigen(&ops.x)?;
        let y_rot = e.transpose() * &ops.y * &e;
        Ok(StochasticOperators {
            lambda_x,
            y_rot,
            da: ops.da(),
        })
    }

    /// Hutchinson estimate of `s(w)` with `probes` Rademacher probes.
    pub fn stieltjes(&self, w: C, probes: usize, tol: f64, rng: &mut impl Rng) -> Result<C> {
        let pa = self.lambda_x.len();
        let g: Vec<C> = self.lambda_x.iter().map(|&l| 1.0 / (l - w)).collect();
        let y = to_complex(&self.y_rot);
        // A = G Y with G diagonal in this basis.
        let a = CMatrix::from_fn(pa, pa, |i, j| g[i] * y[(i, j)]);
        let at = a.transpose();
        let apply = |u: &[C], out: &mut [C]| {
            let um = CMatrix::from_row_slice(pa, pa, u);
            let v = &a * um * &at;
            for i in 0..pa {
                for j in 0..pa {
                    out[i * pa + j] = u[i * pa + j] - v[(i, j)];
                }
            }
        };
        let mut acc = C::new(0.0, 0.0);
        for _ in 0..probes {
            let probe: Vec<f64> = (0..pa * pa)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let rhs: Vec<C> = (0..pa * pa)
                .map(|k| g[k / pa] * g[k % pa] * probe[k])
                .collect();
            let u = gmres(&apply, &rhs, tol, 60, 40)?;
            let um = CMatrix::from_row_slice(pa, pa, &u);
            let t = &y * um * &y;
            for i in 0..pa {
                for j in 0..pa {
                    acc += probe[i * pa + j] * g[i] * t[(i, j)];
                }
            }
        }
        let tr_g: C = g.iter().sum();
        let trace = acc / probes as f64;
        Ok(tr_g / pa as f64 + trace / (self.da as f64 * pa as f64))
    }
}

/// Restarted GMRES for `A x = b` with `A` given as a closure. Returns the
/// iterate once the relative residual is below `tol`.
pub fn gmres(
    apply: &dyn Fn(&[C], &mut [C]),
    b: &[C],
    tol: f64,
    restart: usize,
    max_cycles: usize,
) -> Result<Vec<C>> {
    let n = b.len();
    let norm = |v: &[C]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let dot = |u: &[C], v: &[C]| u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C>();
    let bnorm = norm(b);
    let mut x = vec![C::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut ax = vec![C::new(0.0, 0.0); n];
    let mut last = f64::INFINITY;
    for _ in 0..max_cycles {
        apply(&x, &mut ax);
        let r: Vec<C> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        last = beta / bnorm;
        if last <= tol {
            return Ok(x);
        }
        let mut basis: Vec<Vec<C>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![C::new(0.0, 0.0); restart]; restart + 1];
        let mut cs = vec![C::new(0.0, 0.0); restart];
        let mut sn = vec![C::new(0.0, 0.0); restart];
        let mut e = vec![C::new(0.0, 0.0); restart + 1];
        e[0] = C::new(beta, 0.0);
        let mut steps = 0;
        for j in 0..restart {
            let mut wv = vec![C::new(0.0, 0.0); n];
            apply(&basis[j], &mut wv);
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(vi, &wv);
                h[i][j] = hij;
                for (wk, vk) in wv.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&wv);
            h[j + 1][j] = C::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (hjj, hj1) = (h[j][j], h[j + 1][j]);
            let r = (hjj.norm_sqr() + hj1.norm_sqr()).sqrt();
            if r == 0.0 {
                steps = j;
                break;
            }
            cs[j] = hjj / r;
            sn[j] = hj1 / r;
            h[j][j] = C::new(r, 0.0);
            h[j + 1][j] = C::new(0.0, 0.0);
            e[j + 1] = -sn[j] * e[j];
            e[j] = cs[j].conj() * e[j];
            steps = j + 1;
            if e[j + 1].norm() / bnorm <= tol || hn == 0.0 {
                break;
            }
            basis.push(wv.iter().map(|v| v / hn).collect());
        }
        let mut yv = vec![C::new(0.0, 0.0); steps];
        for i in (0..steps).rev() {
            let mut acc = e[i];
            for k in i + 1..steps {
                acc -= h[i][k] * yv[k];
            }
            yv[i] = acc / h[i][i];
        }
        for (k, yk) in yv.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[k]) {
                *xi += yk * vi;
            }
        }
    }
    apply(&x, &mut ax);
    let res = norm(
        &b.iter()
            .zip(&ax)
            .map(|(bi, ai)| bi - ai)
            .collect::<Vec<_>>(),
    ) / bnorm;
    if res <= tol {
        return Ok(x);
    }
    Err(Error::Solver {
        message: "GMRES did not reach the requested tolerance".into(),
        worst_residual: res.min(last),
    })
}

/// Diagnostics of a general tensor-limit evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralDiagnostics {
    pub pa: usize,
    pub da: usize,
    pub replicas: usize,
    pub eta: f64,
    pub strategy: String,
    /// Grid points where `Im s(w) ≤ 0`.
    pub non_herglotz_points: usize,
    pub min_raw_density: f64,
    pub raw_mass: f64,
}

fn replica_rng(seed: u64, replica: usize, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 32).wrapping_add(replica as u64));
    rng
}

/// Draw the replicas described by `cfg`.
pub fn sample_replicas(
    nu: &SpectralMeasure,
    gamma2: f64,
    cfg: &FreeApproxConfig,
) -> Result<Vec<FreeApprox>> {
    (0..cfg.replicas)
        .map(|r| {
            let mut rng = replica_rng(cfg.seed, r, 1);
            FreeApprox::sample(nu, gamma2, cfg.pa, &mut rng)
        })
        .collect()
}

/// Replica-averaged `s(w)` at the given points.
pub fn general_stieltjes(
    replicas: &[FreeApprox],
    stats: &ActivationStats,
    points: &[C],
    strategy: Strategy,
    cfg: &FreeApproxConfig,
) -> Result<Vec<C>> {
    let mut total = vec![C::new(0.0, 0.0); points.len()];
    for (r, rep) in replicas.iter().enumerate() {
        let ops = rep.operators(stats.alpha, stats.beta_sq);
        let values: Vec<Result<C>> = match strategy.resolve(rep.pa()) {
            Strategy::Stochastic => {
                let st = StochasticOperators::new(&ops)?;
                points
                    .par_iter()
                    .enumerate()
                    .map(|(k, &w)| {
                        let mut rng = replica_rng(cfg.seed, r, 2 + k as u64);
                        st.stieltjes(w, cfg.probes, cfg.solver_tol, &mut rng)
                    })
                    .collect()
            }
            _ => points.par_iter().map(|&w| ops.stieltjes_dense(w)).collect(),
        };
        for (t, v) in total.iter_mut().zip(values) {
            *t += v?;
        }
    }
    let n = replicas.len() as f64;
    Ok(total.into_iter().map(|t| t / n).collect())
}

/// Tensor limit `μ_{ν,φ}` from the finite free approximation, inverted at
/// `Im w = cfg.eta`. The result is the Cauchy-smoothed law at that scale.
pub fn q_limit_general(
    nu: &SpectralMeasure,
    gamma2: f64,
    stats: &ActivationStats,
    cfg: &FreeApproxConfig,
) -> Result<(SpectralMeasure, GeneralDiagnostics)> {
    cfg.validate()?;
    let replicas = sample_replicas(nu, gamma2, cfg)?;
    let (lo, hi) = nu.support();
    let a2 = stats.alpha * stats.alpha;
    let top = hi * (stats.beta_sq + 2.0 * a2 * (1.0 + gamma2.sqrt()).powi(2));
    let bottom = (lo * stats.beta_sq).max(0.0);
    let grid = match cfg.grid.range {
        Some(_) => cfg.grid.resolve(bottom, top)?,
        None => {
            let pad = 0.1 * (top - bottom) + 5.0 * cfg.eta;
            Grid::spanning(bottom - pad, top + pad, cfg.grid.points)?
        }
    };
    let xs = grid.points();
    let points: Vec<C> = xs.iter().map(|&x| C::new(x, cfg.eta)).collect();
    let values = general_stieltjes(&replicas, stats, &points, cfg.strategy, cfg)?;
    let raw: Vec<f64> = values.iter().map(|s| s.im / PI).collect();
    let min_raw = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let diag = GeneralDiagnostics {
        pa: cfg.pa,
        da: replicas[0].da(),
        replicas: cfg.replicas,
        eta: cfg.eta,
        strategy: format!("{:?}", cfg.strategy.resolve(cfg.pa)).to_lowercase(),
        non_herglotz_points: raw.iter().filter(|&&v| v <= 0.0).count(),
        min_raw_density: min_raw,
        raw_mass: grid.step * (raw.iter().sum::<f64>() - 0.5 * (raw[0] + raw[raw.len() - 1])),
    };
    if min_raw < -1e-6 {
        return Err(Error::Numerical(format!(
            "tensor-limit density is negative ({min_raw:.3e}) after inversion"
        )));
    }
    let density = raw.into_iter().map(|v| v.max(0.0)).collect();
    let m = SpectralMeasure::normalized(Vec::new(), grid, density)?;
    Ok((m, diag))
}
