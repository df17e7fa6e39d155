//! Gaussian quadrature rules built with the Golub–Welsch algorithm.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a quadrature rule, nodes ascending.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix, weights the
/// squared first eigenvector components times the total mass `mu0`.
fn golub_welsch(off_diag: &[f64], mu0: f64) -> Rule {
    let n = off_diag.len() + 1;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize: both weight functions used here are even.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss–Hermite rule for the standard normal density (probabilists'
/// convention): `integrate(f)` approximates `E f(Z)`, `Z ~ N(0,1)`.
pub fn gauss_hermite(order: usize) -> Rule {
    assert!(order >= 1);
    let off: Vec<f64> = (1..order).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(&off, 1.0)
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(order: usize) -> Rule {
    assert!(order >= 1);
    let off: Vec<f64> = (1..order)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

/// Gauss–Legendre rule mapped onto [a, b].
pub fn gauss_legendre_on(base: &Rule, a: f64, b: f64) -> Rule {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Rule {
        nodes: base.nodes.iter().map(|&t| mid + half * t).collect(),
        weights: base.weights.iter().map(|&w| half * w).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let r = gauss_hermite(40);
        assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!(r.integrate(|x| x).abs() < 1e-13);
        assert!((r.integrate(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((r.integrate(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((r.integrate(|x| x.powi(6)) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn legendre_polynomials_exact() {
        let r = gauss_legendre(5);
        assert!((r.integrate(|_| 1.0) - 2.0).abs() < 1e-14);
        assert!((r.integrate(|x| x.powi(8)) - 2.0 / 9.0).abs() < 1e-14);
        let m = gauss_legendre_on(&r, 1.0, 3.0);
        assert!((m.integrate(|x| x * x) - 26.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn high_order_hermite_is_finite() {
        let r = gauss_hermite(200);
        assert!(r.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
