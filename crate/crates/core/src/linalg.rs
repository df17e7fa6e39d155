//! Dense symmetric eigensolvers shared by the tensor and simulation code.
//!
//! Large solves go through faer, which is markedly faster than nalgebra at
//! the sizes used here. faer runs sequentially so that each seed of a batch
//! is one unit of parallelism and results never depend on thread count.

use crate::error::{Error, Result};
use faer::{Mat, Par, Side};
use nalgebra::DMatrix;
use std::sync::Once;

static SEQUENTIAL: Once = Once::new();

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Validation(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Largest entry of `|A - Aᵀ|`.
pub fn symmetry_defect(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows().min(a.ncols());
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Ascending eigenvalues of a symmetric matrix (lower triangle is read).
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut ev = to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolve failed: {e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Ascending eigenvalues and matching orthonormal eigenvectors (columns).
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_square(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolve failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, k| u[(i, order[k])]);
    Ok((values, vectors))
}

/// Symmetric square root `V diag(√max(λ,0)) Vᵀ` of a PSD matrix. Fails if
/// the smallest eigenvalue is below `-tol · max(λ_max, 1)`.
pub fn psd_sqrt(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(a)?;
    let top = values.last().copied().unwrap_or(0.0).max(1.0);
    if let Some(&low) = values.first() {
        if low < -tol * top {
            return Err(Error::Validation(format!(
                "matrix is not positive semidefinite (smallest eigenvalue {low:.3e})"
            )));
        }
    }
    let mut scaled = vectors.clone();
    for (k, &l) in values.iter().enumerate() {
        let r = l.max(0.0).sqrt();
        scaled.column_mut(k).scale_mut(r);
    }
    Ok(&scaled * vectors.transpose())
}
