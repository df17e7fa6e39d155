//! The law of `χ` and the special-case tensor limit `Law(α² χ + β²)`.

use super::mp::{mp_map_with_diagnostics, GridSpec, MpMapConfig, SolverDiagnostics};
use crate::activation::ActivationStats;
use crate::error::{domain, Error, Result};
use crate::measure::{affine, combine, convolve_classical, Grid, SpectralMeasure};

/// Weights of `Law(χ)` in the basis `{δ₀, μ, μ*μ}` where `μ` is the
/// normalized continuous part of `MP^γ ⊠ ν` and `a0` its atom at zero.
///
/// Expanding `(γ/2)(m*m) + (1-γ)m + (γ/2)δ₀` with `m = a0 δ₀ + (1-a0) μ`
/// and collecting terms keeps every weight nonnegative, so the negative
/// `1 - γ` for `γ > 1` never reaches the clipping stage.
pub fn chi_weights(a0: f64, gamma2: f64) -> (f64, f64, f64) {
    let w0 = 0.5 * gamma2 * a0 * a0 + (1.0 - gamma2) * a0 + 0.5 * gamma2;
    let w1 = (1.0 - a0) * (gamma2 * a0 + 1.0 - gamma2);
    let w2 = 0.5 * gamma2 * (1.0 - a0) * (1.0 - a0);
    (w0, w1, w2)
}

/// `Law(χ) = (γ₂/2)(MP^{γ₂}⊠ν)*(MP^{γ₂}⊠ν) + (1-γ₂)(MP^{γ₂}⊠ν) + (γ₂/2)δ₀`.
pub fn chi_law(nu: &SpectralMeasure, gamma2: f64, cfg: &MpMapConfig) -> Result<SpectralMeasure> {
    chi_law_with_diagnostics(nu, gamma2, cfg).map(|(m, _)| m)
}

pub fn chi_law_with_diagnostics(
    nu: &SpectralMeasure,
    gamma2: f64,
    cfg: &MpMapConfig,
) -> Result<(SpectralMeasure, SolverDiagnostics)> {
    if !(gamma2 > 0.0) || !gamma2.is_finite() {
        return domain(format!("gamma2 must be positive, got {gamma2}"));
    }
    let (m, diag) = mp_map_with_diagnostics(nu, gamma2, cfg)?;
    let a0 = m.atom_at(0.0);
    let (w0, mut w1, w2) = chi_weights(a0, gamma2);
    if w1 < 0.0 {
        if w1 < -1e-9 {
            return Err(Error::Numerical(format!(
                "Law(chi) weight on the MP-map part is negative ({w1:.3e})"
            )));
        }
        w1 = 0.0;
    }
    let mu = match m.continuous_part() {
        Some(mu) => mu,
        None => return Ok((SpectralMeasure::dirac(0.0), diag)),
    };
    let conv = convolve_classical(&mu, &mu)?;
    let mixed = combine(&[w0, w1, w2], &[SpectralMeasure::dirac(0.0), mu, conv]);
    let (lo, hi) = mixed.support();
    // χ ≥ 0, so the grid is not padded below zero where convolution
    // ringing would otherwise leave spurious mass.
    let padded = GridSpec::with_points(cfg.grid.points).resolve(lo.max(0.0), hi)?;
    let grid = if padded.start < 0.0 {
        Grid::spanning(0.0, padded.end(), padded.n)?
    } else {
        padded
    };
    let out = mixed.resample(grid)?;
    Ok((out, diag))
}

/// Whether `ν` is a single point mass, and where.
fn single_atom(nu: &SpectralMeasure) -> Option<f64> {
    match nu.atoms() {
        [(x, m)] if nu.density().is_empty() && (m - 1.0).abs() < 1e-12 => Some(*x),
        _ => None,
    }
}

/// `Law(α² χ + β²)` in the two cases where it is exact: `ν = δ_v`
/// (then `Q = v Q̂` and the shift is `v β²`) or `β² = 0`.
pub fn q_limit_special(
    nu: &SpectralMeasure,
    gamma2: f64,
    stats: &ActivationStats,
    cfg: &MpMapConfig,
) -> Result<SpectralMeasure> {
    let a2 = stats.alpha * stats.alpha;
    if let Some(v) = single_atom(nu) {
        let chi = chi_law(&SpectralMeasure::dirac(1.0), gamma2, cfg)?;
        return Ok(affine(&chi, v * a2, v * stats.beta_sq));
    }
    if stats.beta_sq == 0.0 {
        let chi = chi_law(nu, gamma2, cfg)?;
        return Ok(affine(&chi, a2, 0.0));
    }
    Err(Error::Unsupported(
        "the closed-form tensor limit needs a point-mass nu or beta^2 = 0; use q_limit_general"
            .into(),
    ))
}

/// Whether [`q_limit_special`] applies.
pub fn special_case_applies(nu: &SpectralMeasure, stats: &ActivationStats) -> bool {
    single_atom(nu).is_some() || stats.beta_sq == 0.0
}
