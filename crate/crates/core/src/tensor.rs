//! The covariance tensor `Q` on `ℝ^d ⊗ ℝ^p` as an explicit `dp × dp`
//! matrix, its exact spectrum from the SVD of `W`, and the empirical
//! spectral distributions used as brute-force oracles.
//!
//! Index convention: the pair `(q, r)` with `q < d`, `r < p` is the flat
//! index `q·p + r`. Viewing a vector as a `d × p` matrix `A`,
//!
//! ```text
//! Q̂ A = (α²/d) (A WᵀW + W Aᵀ W) + β² A,      Q = 𝒟 Q̂ 𝒟,
//! ```
//!
//! where `𝒟` multiplies column `r` of `A` by `D_r`.

use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::measure::{Grid, SpectralMeasure};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Default cap on `dp`: a dense `6000 × 6000` tensor takes 288 MB.
pub const DEFAULT_DP_CAP: usize = 6000;

/// Tolerance of the positive-semidefiniteness invariant, relative to the
/// largest eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Dense covariance tensor with the data it was built from.
#[derive(Clone, Debug)]
pub struct TensorQ {
    pub d: usize,
    pub p: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Source `d × p` weight matrix.
    pub w: DMatrix<f64>,
    /// Diagonal of `D` (all ones for `Q̂`).
    pub d_diag: Vec<f64>,
    /// Symmetric `dp × dp` matrix.
    pub flat: DMatrix<f64>,
}

impl TensorQ {
    pub fn dim(&self) -> usize {
        self.d * self.p
    }

    pub fn alpha_sq_over_d(&self) -> f64 {
        self.alpha * self.alpha / self.d as f64
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta * self.beta
    }

    /// Adds the finite-size remainder
    /// `R⁽¹⁾_{(q,r),(s,t)} = (α²/d) μ₄ δ_qs (WD)_qr (WD)_qt`.
    ///
    /// `mu4` is used as given; passing the fourth cumulant of the entries
    /// of `X` (0 for Gaussian, −2 for Rademacher) gives the correction to
    /// the Gaussian covariance. The term vanishes in the limit and is never
    /// part of a limit-law comparison.
    pub fn with_remainder(mut self, mu4: f64) -> Result<Self> {
        if !mu4.is_finite() {
            return validation("fourth moment must be finite");
        }
        let (d, p) = (self.d, self.p);
        let scale = self.alpha_sq_over_d() * mu4;
        let wd = DMatrix::from_fn(d, p, |q, r| self.w[(q, r)] * self.d_diag[r]);
        for q in 0..d {
            for r in 0..p {
                for t in 0..p {
                    self.flat[(q * p + r, q * p + t)] += scale * wd[(q, r)] * wd[(q, t)];
                }
            }
        }
        Ok(self)
    }

    /// Ascending eigenvalues of the flat matrix.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::sym_eigenvalues(&self.flat)
    }

    /// Writes a JSON header line `{"d","p","alpha","beta"}` followed by the
    /// row-major entries as little-endian `f64`.
    pub fn write_binary(&self, out: &mut impl Write) -> Result<()> {
        let header = BinaryHeader {
            d: self.d,
            p: self.p,
            alpha: self.alpha,
            beta: self.beta,
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        let n = self.dim();
        let mut row = Vec::with_capacity(8 * n);
        for i in 0..n {
            row.clear();
            for j in 0..n {
                row.extend_from_slice(&self.flat[(i, j)].to_le_bytes());
            }
            out.write_all(&row)?;
        }
        Ok(())
    }
}

/// Header of the binary dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryHeader {
    pub d: usize,
    pub p: usize,
    pub alpha: f64,
    pub beta: f64,
}

/// Reads a dump written by [`TensorQ::write_binary`].
pub fn read_binary(input: &mut impl Read) -> Result<(BinaryHeader, DMatrix<f64>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Validation("binary dump has no header line".into()))?;
    let header: BinaryHeader = serde_json::from_slice(&bytes[..split])?;
    let n = header.d * header.p;
    let body = &bytes[split + 1..];
    if body.len() != 8 * n * n {
        return validation(format!(
            "binary dump holds {} bytes, expected {}",
            body.len(),
            8 * n * n
        ));
    }
    let mut m = DMatrix::zeros(n, n);
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        m[(k / n, k % n)] = f64::from_le_bytes(chunk.try_into().expect("chunk of 8 bytes"));
    }
    Ok((header, m))
}

fn check_inputs(w: &DMatrix<f64>, alpha: f64, beta: f64, cap: usize) -> Result<()> {
    let (d, p) = w.shape();
    if d == 0 || p == 0 {
        return validation("W must be non-empty");
    }
    if !alpha.is_finite() || !beta.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return validation("W, alpha and beta must be finite");
    }
    if d.saturating_mul(p) > cap {
        return Err(Error::ResourceCap(format!(
            "tensor dimension d·p = {} exceeds the cap {cap}",
            d.saturating_mul(p)
        )));
    }
    Ok(())
}

/// `Q̂` with the default size cap.
pub fn build_qhat(w: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<TensorQ> {
    build_q_capped(w, &vec![1.0; w.ncols()], alpha, beta, DEFAULT_DP_CAP)
}

/// `Q = 𝒟 Q̂ 𝒟` with the default size cap.
pub fn build_q(w: &DMatrix<f64>, d_diag: &[f64], alpha: f64, beta: f64) -> Result<TensorQ> {
    build_q_capped(w, d_diag, alpha, beta, DEFAULT_DP_CAP)
}

/// `Q_{(q,r),(s,t)} = D_r D_t ((α²/d)[δ_qs (WᵀW)_rt + W_qt W_sr] + β² δ_qs δ_rt)`.
pub fn build_q_capped(
    w: &DMatrix<f64>,
    d_diag: &[f64],
    alpha: f64,
    beta: f64,
    cap: usize,
) -> Result<TensorQ> {
    check_inputs(w, alpha, beta, cap)?;
    let (d, p) = w.shape();
    if d_diag.len() != p {
        return validation(format!("D has {} entries, W has {p} columns", d_diag.len()));
    }
    if d_diag.iter().any(|v| !v.is_finite()) {
        return validation("D must be finite");
    }
    let n = d * p;
    let a = alpha * alpha / d as f64;
    let b = beta * beta;
    let gram = w.transpose() * w;
    let mut data = vec![0.0; n * n];
    // Column (s, t) of the symmetric matrix, filled in parallel.
    data.par_chunks_mut(n).enumerate().for_each(|(col, out)| {
        let (s, t) = (col / p, col % p);
        for q in 0..d {
            for r in 0..p {
                let mut v = a * w[(q, t)] * w[(s, r)];
                if q == s {
                    v += a * gram[(r, t)];
                    if r == t {
                        v += b;
                    }
                }
                out[q * p + r] = d_diag[r] * d_diag[t] * v;
            }
        }
    });
    Ok(TensorQ {
        d,
        p,
        alpha,
        beta,
        w: w.clone(),
        d_diag: d_diag.to_vec(),
        flat: DMatrix::from_vec(n, n, data),
    })
}

/// Eigenvalue families of `Q̂`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactSpectrum {
    pub d: usize,
    pub p: usize,
    /// `(i, j, (α²/d)(σᵢ² + σⱼ²) + β²)` for `i ≤ j < min(d, p)`.
    pub paired: Vec<(usize, usize, f64)>,
    /// `(α²/d) σⱼ² + β²`, each with multiplicity `d - p`; empty unless `d > p`.
    pub tail: Vec<f64>,
    pub tail_multiplicity: usize,
    pub kernel_value: f64,
    pub kernel_multiplicity: usize,
}

impl ExactSpectrum {
    pub fn total_multiplicity(&self) -> usize {
        self.paired.len() + self.tail.len() * self.tail_multiplicity + self.kernel_multiplicity
    }

    /// All `dp` eigenvalues in ascending order.
    pub fn sorted(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.paired.iter().map(|&(_, _, v)| v).collect();
        for &v in &self.tail {
            all.extend(std::iter::repeat(v).take(self.tail_multiplicity));
        }
        all.extend(std::iter::repeat(self.kernel_value).take(self.kernel_multiplicity));
        all.sort_by(f64::total_cmp);
        all
    }
}

/// Singular triplets of `W` sorted by decreasing singular value, plus an
/// orthonormal basis of the complement of its column space when `d > p`.
struct Svd {
    sigma: Vec<f64>,
    /// `d × m` left singular vectors.
    u: DMatrix<f64>,
    /// `p × m` right singular vectors.
    v: DMatrix<f64>,
    /// `d × (d - m)` complement of the span of `u`.
    u_perp: DMatrix<f64>,
}

fn svd(w: &DMatrix<f64>) -> Result<Svd> {
    let (d, p) = w.shape();
    let m = d.min(p);
    let s = w.clone().svd(true, true);
    let (u, vt) = match (s.u, s.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD of W failed".into())),
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| s.singular_values[j].total_cmp(&s.singular_values[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| s.singular_values[i]).collect();
    let u = DMatrix::from_fn(d, m, |r, k| u[(r, order[k])]);
    let v = DMatrix::from_fn(p, m, |r, k| vt[(order[k], r)]);
    let u_perp = if d > m {
        // Eigenvectors of the projector I - UUᵀ with eigenvalue one.
        let proj = DMatrix::identity(d, d) - &u * u.transpose();
        let (_, vecs) = linalg::sym_eigen(&proj)?;
        vecs.columns(m, d - m).into_owned()
    } else {
        DMatrix::zeros(d, 0)
    };
    Ok(Svd {
        sigma,
        u,
        v,
        u_perp,
    })
}

/// Exact spectrum of `Q̂` from the singular values of `W`.
pub fn exact_qhat_spectrum(w: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<ExactSpectrum> {
    check_inputs(w, alpha, beta, usize::MAX)?;
    let (d, p) = w.shape();
    let a = alpha * alpha / d as f64;
    let b = beta * beta;
    let sigma = svd(w)?.sigma;
    let m = sigma.len();
    let mut paired = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            paired.push((i, j, a * (sigma[i].powi(2) + sigma[j].powi(2)) + b));
        }
    }
    let (tail, tail_multiplicity) = if d > p {
        (sigma.iter().map(|s| a * s * s + b).collect(), d - p)
    } else {
        (Vec::new(), 0)
    };
    let kernel_multiplicity = d * p - paired.len() - tail.len() * tail_multiplicity;
    Ok(ExactSpectrum {
        d,
        p,
        paired,
        tail,
        tail_multiplicity,
        kernel_value: b,
        kernel_multiplicity,
    })
}

/// Worst residuals `‖Q̂x − λx‖` over the checked eigenvectors, each `x`
/// having unit norm.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EigenvectorReport {
    pub checked: usize,
    pub worst_paired: f64,
    pub worst_kernel: f64,
    pub worst_tail: f64,
}

impl EigenvectorReport {
    pub fn worst(&self) -> f64 {
        self.worst_paired
            .max(self.worst_kernel)
            .max(self.worst_tail)
    }
}

/// `vec(a ⊗ b)` under the flat index `q·p + r`.
fn outer(a: &[f64], b: &[f64]) -> DVector<f64> {
    DVector::from_fn(a.len() * b.len(), |k, _| a[k / b.len()] * b[k % b.len()])
}

fn residual(q: &DMatrix<f64>, x: &DVector<f64>, lambda: f64) -> f64 {
    let norm = x.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let x = x / norm;
    (q * &x - lambda * &x).norm()
}

/// Checks the closed-form eigenvectors `σⱼ uⁱ⊗vʲ + σᵢ uʲ⊗vⁱ` (eigenvalue
/// `(α²/d)(σᵢ² + σⱼ²) + β²`), the kernel partners `σᵢ uⁱ⊗vʲ − σⱼ uʲ⊗vⁱ`
/// (eigenvalue `β²`) and, when `d > p`, the tail vectors `u⊥⊗vʲ`, on
/// `count` index pairs sampled from `rng`.
pub fn verify_eigenvectors(
    w: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Result<EigenvectorReport> {
    let q = build_qhat(w, alpha, beta)?;
    let s = svd(w)?;
    let m = s.sigma.len();
    let total_pairs = m * (m + 1) / 2;
    if count > total_pairs {
        return validation(format!("asked for {count} pairs, only {total_pairs} exist"));
    }
    let a = q.alpha_sq_over_d();
    let b = q.beta_sq();
    let col = |mat: &DMatrix<f64>, k: usize| mat.column(k).iter().copied().collect::<Vec<_>>();
    let mut report = EigenvectorReport::default();
    for flat in sample(rng, total_pairs, count).into_iter() {
        let (i, j) = pair_from_index(flat, m);
        let (si, sj) = (s.sigma[i], s.sigma[j]);
        let (ui, uj, vi, vj) = (col(&s.u, i), col(&s.u, j), col(&s.v, i), col(&s.v, j));
        let x = outer(&ui, &vj) * sj + outer(&uj, &vi) * si;
        let lambda = a * (si * si + sj * sj) + b;
        report.worst_paired = report.worst_paired.max(residual(&q.flat, &x, lambda));
        if i != j {
            let y = outer(&ui, &vj) * si - outer(&uj, &vi) * sj;
            report.worst_kernel = report.worst_kernel.max(residual(&q.flat, &y, b));
        }
        if s.u_perp.ncols() > 0 {
            let k = flat % s.u_perp.ncols();
            let t = outer(&col(&s.u_perp, k), &vj);
            report.worst_tail = report
                .worst_tail
                .max(residual(&q.flat, &t, a * sj * sj + b));
        }
        if q.p > m {
            // v orthogonal to the row space: uⁱ⊗v is in the kernel.
            let proj = DMatrix::identity(q.p, q.p) - &s.v * s.v.transpose();
            let seed = DVector::from_fn(q.p, |r, _| ((r + flat) % 7) as f64 - 3.0);
            let v_perp = proj * seed;
            let y = outer(&ui, v_perp.as_slice());
            report.worst_kernel = report.worst_kernel.max(residual(&q.flat, &y, b));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// The `k`-th pair `(i, j)` with `i ≤ j < m` in row-major order.
fn pair_from_index(mut k: usize, m: usize) -> (usize, usize) {
    for i in 0..m {
        let row = m - i;
        if k < row {
            return (i, i + k);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}

/// Raw empirical spectral distribution: one atom of mass `1/n` per
/// eigenvalue.
pub fn esd_of(matrix: &DMatrix<f64>) -> Result<SpectralMeasure> {
    if linalg::symmetry_defect(matrix) > 1e-10 * matrix.amax().max(1.0) {
        return validation("ESD needs a symmetric matrix");
    }
    SpectralMeasure::empirical(&linalg::sym_eigenvalues(matrix)?)
}

/// Gaussian-kernel smoothing of an ESD with bandwidth `h` on `points`
/// grid points spanning the eigenvalues padded by `4h`.
pub fn esd_smoothed(
    esd: &SpectralMeasure,
    bandwidth: f64,
    points: usize,
) -> Result<SpectralMeasure> {
    let (lo, hi) = esd.support();
    let grid = Grid::spanning(lo - 4.0 * bandwidth, hi + 4.0 * bandwidth, points)?;
    esd.gaussian_smoothed(bandwidth, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_is_row_major() {
        let m = 4;
        let pairs: Vec<_> = (0..m * (m + 1) / 2)
            .map(|k| pair_from_index(k, m))
            .collect();
        assert_eq!(pairs[0], (0, 0));
        assert_eq!(pairs[3], (0, 3));
        assert_eq!(pairs[4], (1, 1));
        assert_eq!(*pairs.last().unwrap(), (3, 3));
    }
}
