//! Activations and their Gaussian-chaos statistics.
//!
//! The model only involves the derivative `φ = σ'` of the network
//! nonlinearity. For `Z ~ N(0, 1)` we split `φ(Z) = c + α Z + ψ(Z)` with
//! `c = E φ(Z)`, `α = E[Z φ(Z)]` and `β² = E ψ(Z)²`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, validation, Error, Result};
use crate::quadrature::{self, Rule};

/// Default quadrature order.
pub const DEFAULT_ORDER: usize = 200;
/// Smallest accepted quadrature order.
pub const MIN_ORDER: usize = 32;
/// Half-width of the integration window used for piecewise rules.
const WINDOW: f64 = 16.0;
/// `β²` at or below this is treated as exactly zero.
pub const BETA_SQ_FLOOR: f64 = 1e-12;
/// Maximal panel width of piecewise rules.
const PANEL: f64 = 0.5;

/// The triple `(c, α, β²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub c: f64,
    pub alpha: f64,
    pub beta_sq: f64,
}

/// Piecewise-linear activation given by a table of `(x, φ(x))` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// `σ(x_k) = ∫_0^{x_k} φ`, used for the conjugate kernel.
    sigma_at: Vec<f64>,
}

impl Table {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Table> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return validation("an activation table needs at least two (x, phi) rows");
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return validation("activation table contains non-finite values");
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return validation("activation table abscissas must be strictly increasing");
        }
        let mut t = Table {
            xs,
            ys,
            sigma_at: Vec::new(),
        };
        t.sigma_at = t.xs.iter().map(|&x| t.integral_from_zero(x)).collect();
        Ok(t)
    }

    /// Parse a CSV with two numeric columns; a non-numeric first line is
    /// treated as a header.
    pub fn from_csv(text: &str) -> Result<Table> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return validation(format!(
                    "activation table line {}: expected 2 columns",
                    i + 1
                ));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                _ if i == 0 => continue,
                _ => return validation(format!("activation table line {}: not numeric", i + 1)),
            }
        }
        Table::new(xs, ys)
    }

    fn segment(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&t| t <= x);
        k.clamp(1, self.xs.len() - 1) - 1
    }

    fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Exact integral of the interpolant (linearly extrapolated) from 0.
    fn integral_from_zero(&self, x: f64) -> f64 {
        let prim = |a: f64, b: f64| {
            // ∫_a^b of the linear piece through a's segment, a and b in it.
            let fa = self.eval(a);
            let fb = self.eval(b);
            0.5 * (fa + fb) * (b - a)
        };
        let (lo, hi, sign) = if x >= 0.0 {
            (0.0, x, 1.0)
        } else {
            (x, 0.0, -1.0)
        };
        let mut cuts = vec![lo];
        cuts.extend(self.xs.iter().copied().filter(|&t| t > lo && t < hi));
        cuts.push(hi);
        sign * cuts.windows(2).map(|w| prim(w[0], w[1])).sum::<f64>()
    }

    fn sigma(&self, x: f64) -> f64 {
        let k = self.segment(x);
        let x0 = self.xs[k];
        self.sigma_at[k] + 0.5 * (self.eval(x0) + self.eval(x)) * (x - x0)
    }
}

/// The derivative `φ = σ'` of the nonlinearity.
#[derive(Clone)]
pub enum Activation {
    /// `σ(x) = x²/2`, `φ(x) = x`.
    Identity,
    /// `σ(x) = min(x, 0)²/2`, `φ(x) = min(x, 0)`.
    NegPart,
    /// `σ(x) = x|x|/2`, `φ(x) = |x|`.
    Abs,
    /// `σ(x) = max(x - b, 0)²/2`, `φ(x) = max(x - b, 0)`.
    ShiftedRelu { shift: f64 },
    /// Tabulated `φ`, linearly interpolated and extrapolated.
    Tabulated(Table),
    /// Arbitrary function; `breakpoints` lists points where `φ` is not
    /// smooth so quadrature can split there.
    Custom {
        name: String,
        phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        sigma: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        breakpoints: Vec<f64>,
    },
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Activation({})", self.name())
    }
}

impl Activation {
    /// Parse `identity`, `neg_part`, `abs`, `shifted_relu[:b]` or
    /// `table:<path>`.
    pub fn parse(spec: &str) -> Result<Activation> {
        let spec = spec.trim();
        let (head, arg) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        match (head, arg) {
            ("identity" | "linear" | "quadratic", None) => Ok(Activation::Identity),
            ("neg_part", None) => Ok(Activation::NegPart),
            ("abs", None) => Ok(Activation::Abs),
            ("shifted_relu", None) => Ok(Activation::ShiftedRelu { shift: 0.0 }),
            ("shifted_relu", Some(b)) => {
                let shift: f64 = b
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad shift in activation '{spec}'")))?;
                if !shift.is_finite() {
                    return validation("activation shift must be finite");
                }
                Ok(Activation::ShiftedRelu { shift })
            }
            ("table", Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Validation(format!("cannot read activation table {path}: {e}"))
                })?;
                Ok(Activation::Tabulated(Table::from_csv(&text)?))
            }
            _ => validation(format!("unknown activation '{spec}'")),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Activation::Identity => "identity".into(),
            Activation::NegPart => "neg_part".into(),
            Activation::Abs => "abs".into(),
            Activation::ShiftedRelu { shift } => format!("shifted_relu:{shift}"),
            Activation::Tabulated(_) => "table".into(),
            Activation::Custom { name, .. } => name.clone(),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::NegPart => x.min(0.0),
            Activation::Abs => x.abs(),
            Activation::ShiftedRelu { shift } => (x - shift).max(0.0),
            Activation::Tabulated(t) => t.eval(x),
            Activation::Custom { phi, .. } => phi(x),
        }
    }

    /// The nonlinearity `σ` itself (an antiderivative of `φ`).
    pub fn sigma(&self, x: f64) -> Result<f64> {
        Ok(match self {
            Activation::Identity => 0.5 * x * x,
            Activation::NegPart => {
                let m = x.min(0.0);
                0.5 * m * m
            }
            Activation::Abs => 0.5 * x * x.abs(),
            Activation::ShiftedRelu { shift } => {
                let m = (x - shift).max(0.0);
                0.5 * m * m
            }
            Activation::Tabulated(t) => t.sigma(x),
            Activation::Custom { sigma, name, .. } => match sigma {
                Some(s) => s(x),
                None => {
                    return Err(Error::Unsupported(format!(
                        "activation '{name}' has no sigma; the conjugate kernel needs one"
                    )))
                }
            },
        })
    }

    /// Points where `φ` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Activation::Identity => Vec::new(),
            Activation::NegPart | Activation::Abs => vec![0.0],
            Activation::ShiftedRelu { shift } => vec![*shift],
            Activation::Tabulated(t) => t.xs.clone(),
            Activation::Custom { breakpoints, .. } => breakpoints.clone(),
        }
    }

    /// `max |φ(x)| / (1 + |x|^degree)` over a fine sample of [-20, 20].
    pub fn growth_constant(&self, degree: i32) -> f64 {
        (0..=4000)
            .map(|i| {
                let x = -20.0 + 0.01 * i as f64;
                self.phi(x).abs() / (1.0 + x.abs().powi(degree))
            })
            .fold(0.0, f64::max)
    }

    /// Numerical polynomial-growth check: `φ` must be finite on [-20, 20]
    /// and bounded by `C (1 + |x|^degree)` with `C ≤ max_constant`.
    pub fn check_growth(&self, degree: i32, max_constant: f64) -> Result<()> {
        let c = self.growth_constant(degree);
        if !c.is_finite() {
            return Err(Error::Evaluation(format!(
                "activation '{}' is not finite on [-20, 20]",
                self.name()
            )));
        }
        if c > max_constant {
            return validation(format!(
                "activation '{}' grows faster than {max_constant}(1+|x|^{degree})",
                self.name()
            ));
        }
        Ok(())
    }
}

/// Quadrature rule for `E f(Z)` adapted to the given breakpoints.
fn gaussian_rule(breakpoints: &[f64], order: usize) -> Rule {
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| b.is_finite() && b.abs() < WINDOW)
        .collect();
    if cuts.is_empty() {
        return quadrature::gauss_hermite(order);
    }
    cuts.push(-WINDOW);
    cuts.push(WINDOW);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let base = quadrature::gauss_legendre(order);
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in cuts.windows(2) {
        let panels = ((w[1] - w[0]) / PANEL).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            let a = w[0] + k as f64 * h;
            let r = quadrature::gauss_legendre_on(&base, a, a + h);
            for (x, wt) in r.nodes.into_iter().zip(r.weights) {
                nodes.push(x);
                weights.push(wt * norm * (-0.5 * x * x).exp());
            }
        }
    }
    Rule { nodes, weights }
}

/// Gaussian-chaos statistics of an arbitrary function, splitting the
/// quadrature at `breakpoints`.
pub fn hermite_stats_fn(
    phi: &dyn Fn(f64) -> f64,
    breakpoints: &[f64],
    order: usize,
) -> Result<ActivationStats> {
    if order < MIN_ORDER {
        return domain(format!("quadrature order {order} is below {MIN_ORDER}"));
    }
    let rule = gaussian_rule(breakpoints, order);
    let values: Vec<f64> = rule.nodes.iter().map(|&x| phi(x)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation(
            "activation is not finite at a quadrature node".into(),
        ));
    }
    let mut c = 0.0;
    let mut alpha = 0.0;
    for ((&x, &w), &v) in rule.nodes.iter().zip(&rule.weights).zip(&values) {
        c += w * v;
        alpha += w * x * v;
    }
    let mut beta_sq = 0.0;
    for ((&x, &w), &v) in rule.nodes.iter().zip(&rule.weights).zip(&values) {
        let r = v - c - alpha * x;
        beta_sq += w * r * r;
    }
    // Linear activations leave only rounding noise here; snapping it to zero
    // lets them take the closed-form route.
    if beta_sq <= BETA_SQ_FLOOR {
        beta_sq = 0.0;
    }
    Ok(ActivationStats { c, alpha, beta_sq })
}

/// Gaussian-chaos statistics `(c, α, β²)` of an activation.
pub fn hermite_stats(phi: &Activation, order: usize) -> Result<ActivationStats> {
    hermite_stats_fn(&|x| phi.phi(x), &phi.breakpoints(), order)
}
