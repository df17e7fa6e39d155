//! Moments of the covariance tensor `Q` from traces of `d × d` matrices.
//!
//! With `Z = (α/√d) W D`, `H = β² D² + ZᵀZ` and `M(n) = Z H^{n-1} Zᵀ`,
//!
//! ```text
//! (1/pd) Tr Q^k ≈ (1/p) Tr H^k
//!     + (1/dp) Σ n₁ Tr[M(n₁)⋯M(n_ℓ)] Tr[M(n'₁)⋯M(n'_ℓ)],
//! ```
//!
//! summed over pairs of compositions `(n, n')` with the same number of parts
//! `ℓ` and total size `k`.

use crate::error::{domain, validation, Result};
use nalgebra::DMatrix;
use std::collections::HashMap;

pub const MAX_MOMENT_ORDER: usize = 8;

/// `Z = (α/√d) W D` for a `d × p` matrix `W` and `D² = d2`.
pub fn z_matrix(w: &DMatrix<f64>, d2: &[f64], alpha: f64) -> Result<DMatrix<f64>> {
    if w.ncols() != d2.len() {
        return validation("W must have one column per D² entry");
    }
    let scale = alpha / (w.nrows() as f64).sqrt();
    Ok(DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        scale * w[(i, j)] * d2[j].sqrt()
    }))
}

/// `H = β² D² + (α²/d) D Wᵀ W D`.
pub fn h_matrix(w: &DMatrix<f64>, d2: &[f64], alpha: f64, beta_sq: f64) -> Result<DMatrix<f64>> {
    let z = z_matrix(w, d2, alpha)?;
    let mut h = z.transpose() * &z;
    for (j, &v) in d2.iter().enumerate() {
        h[(j, j)] += beta_sq * v;
    }
    Ok(h)
}

fn check_order(k: usize) -> Result<()> {
    if k == 0 || k > MAX_MOMENT_ORDER {
        return domain(format!(
            "moment order must be in 1..={MAX_MOMENT_ORDER}, got {k}"
        ));
    }
    Ok(())
}

/// All compositions of `total` into exactly `parts` positive parts.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 {
            vec![Vec::new()]
        } else {
            Vec::new()
        };
    }
    if total < parts {
        return Vec::new();
    }
    let mut out = Vec::new();
    for first in 1..=total - (parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Lexicographically smallest rotation, the cache key for `Tr ∏ M(nᵢ)`.
fn canonical_rotation(word: &[usize]) -> Vec<usize> {
    (0..word.len())
        .map(|s| {
            word[s..]
                .iter()
                .chain(&word[..s])
                .copied()
                .collect::<Vec<_>>()
        })
        .min()
        .unwrap_or_default()
}

/// Right-hand side of the trace expansion for `(1/pd) Tr Q^k`.
pub fn q_moment_formula(
    w: &DMatrix<f64>,
    d2: &[f64],
    alpha: f64,
    beta_sq: f64,
    k: usize,
) -> Result<f64> {
    check_order(k)?;
    let (d, p) = (w.nrows() as f64, w.ncols() as f64);
    let z = z_matrix(w, d2, alpha)?;
    let h = h_matrix(w, d2, alpha, beta_sq)?;
    // H powers and M(1..k).
    let mut h_pow = vec![DMatrix::identity(h.nrows(), h.ncols())];
    for i in 1..=k {
        let next = &h_pow[i - 1] * &h;
        h_pow.push(next);
    }
    let m: Vec<DMatrix<f64>> = (0..k).map(|n| &z * &h_pow[n] * z.transpose()).collect();
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut trace_of = |word: &[usize]| -> f64 {
        let key = canonical_rotation(word);
        *cache.entry(key).or_insert_with(|| {
            let mut prod = m[word[0] - 1].clone();
            for &n in &word[1..] {
                prod = prod * &m[n - 1];
            }
            prod.trace()
        })
    };
    let mut pairs = 0.0;
    for left in 1..k {
        let right = k - left;
        for parts in 1..=left.min(right) {
            let lefts = compositions(left, parts);
            let rights = compositions(right, parts);
            let right_sum: f64 = rights.iter().map(|c| trace_of(c)).sum();
            for c in &lefts {
                pairs += c[0] as f64 * trace_of(c) * right_sum;
            }
        }
    }
    Ok(h_pow[k].trace() / p + pairs / (d * p))
}

/// `β² = 0` form: `(1/p) Tr H^k + (1/dp) Σ_{q=1}^{k-1} C(k-1, q) Tr H^{k-q} Tr H^q`.
pub fn q_moment_binomial(h: &DMatrix<f64>, d: usize, k: usize) -> Result<f64> {
    check_order(k)?;
    let p = h.nrows() as f64;
    let mut traces = vec![h.nrows() as f64];
    let mut pow = DMatrix::identity(h.nrows(), h.ncols());
    for _ in 1..=k {
        pow = pow * h;
        traces.push(pow.trace());
    }
    let mut pairs = 0.0;
    for q in 1..k {
        pairs += binomial(k - 1, q) * traces[k - q] * traces[q];
    }
    Ok(traces[k] / p + pairs / (d as f64 * p))
}

/// `(1-γ₂) E[A^k] + (γ₂/2) E[(A+B)^k]` for `A, B` i.i.d. from the given
/// eigenvalues, computed exactly from their moments.
pub fn iid_eigenvalue_moment(eigenvalues: &[f64], gamma2: f64, k: usize) -> Result<f64> {
    check_order(k)?;
    if eigenvalues.is_empty() {
        return validation("need at least one eigenvalue");
    }
    let n = eigenvalues.len() as f64;
    let m: Vec<f64> = (0..=k)
        .map(|j| eigenvalues.iter().map(|x| x.powi(j as i32)).sum::<f64>() / n)
        .collect();
    let sum_sq: f64 = (0..=k).map(|q| binomial(k, q) * m[q] * m[k - q]).sum();
    Ok((1.0 - gamma2) * m[k] + 0.5 * gamma2 * sum_sq)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
