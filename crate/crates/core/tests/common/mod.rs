//! Closed-form oracles shared by the integration tests.
#![allow(dead_code)]

use ntk_spectra::measure::{Grid, SpectralMeasure};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Closed-form MP density with ratio `gamma` (continuous part only).
pub fn mp_density(gamma: f64, x: f64) -> f64 {
    let lo = (1.0 - gamma.sqrt()).powi(2);
    let hi = (1.0 + gamma.sqrt()).powi(2);
    if x <= lo || x >= hi {
        return 0.0;
    }
    ((hi - x) * (x - lo)).sqrt() / (2.0 * PI * gamma * x)
}

/// MP law on a fine grid over its exact support, atom included. At the
/// hard edge of `gamma = 1` the first node is set so that the first cell
/// carries its exact mass (`∫_0^h`, computed with `x = u²`).
pub fn mp_oracle(gamma: f64, points: usize) -> SpectralMeasure {
    let lo = (1.0 - gamma.sqrt()).powi(2);
    let hi = (1.0 + gamma.sqrt()).powi(2);
    let grid = Grid::spanning(lo, hi, points).unwrap();
    let mut density: Vec<f64> = grid
        .points()
        .iter()
        .map(|&x| mp_density(gamma, x))
        .collect();
    if lo == 0.0 {
        let h = grid.step;
        let n = 2000;
        let du = h.sqrt() / n as f64;
        let exact: f64 = (0..n)
            .map(|k| {
                let u = (k as f64 + 0.5) * du;
                2.0 * u * mp_density(gamma, u * u) * du
            })
            .sum();
        density[0] = 2.0 * exact / h - density[1];
    }
    let atom = if gamma > 1.0 { 1.0 - 1.0 / gamma } else { 0.0 };
    let atoms = if atom > 0.0 {
        vec![(0.0, atom)]
    } else {
        Vec::new()
    };
    let cont: f64 =
        grid.step * (density.iter().sum::<f64>() - 0.5 * (density[0] + density[points - 1]));
    let density = density
        .into_iter()
        .map(|v| v * (1.0 - atom) / cont)
        .collect();
    SpectralMeasure::new(atoms, grid, density).unwrap()
}

/// Closed-form MP Stieltjes transform, branch with positive imaginary part.
pub fn mp_stieltjes(gamma: f64, z: Complex64) -> Complex64 {
    let disc = ((z - 1.0 - gamma) * (z - 1.0 - gamma) - 4.0 * gamma).sqrt();
    let a = (1.0 - gamma - z + disc) / (2.0 * gamma * z);
    let b = (1.0 - gamma - z - disc) / (2.0 * gamma * z);
    if a.im > 0.0 {
        a
    } else {
        b
    }
}
