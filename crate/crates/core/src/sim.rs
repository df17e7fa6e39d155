//! Sampling of the two-layer model and the empirical spectra of its kernels.
//!
//! With `X` (`n × d`), `W` (`d × p`) and `D² = diag(a²)`,
//!
//! ```text
//! K     = (XXᵀ/d) ⊙ (Y D² Yᵀ/p),       Y = φ(XW/√d),
//! K_ck  = (1/p) σ(XW/√d) σ(XW/√d)ᵀ,
//! K_ntk = K_ck + K,
//! K̃     = (XXᵀ/d) ⊙ (1/p) Ỹ D² Ỹᵀ,      Ỹ = α XW/√d + ψ(X̃),
//! ```
//!
//! with `ψ = φ - c - α x` and `X̃` an independent `n × p` Gaussian matrix.
//! Every random matrix has its own ChaCha20 stream derived from the seed,
//! so results do not depend on evaluation order or thread count.

use crate::activation::{hermite_stats, Activation, ActivationStats, DEFAULT_ORDER};
use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::measure::SpectralMeasure;
use crate::tensor::{TensorQ, PSD_TOLERANCE};
use nalgebra::DMatrix;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default cap on the number of samples `n`.
pub const DEFAULT_N_CAP: usize = 4000;

/// Law of the entries of `X`, both centered with unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XLaw {
    Gaussian,
    Rademacher,
}

impl FromStr for XLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<XLaw> {
        match s.trim() {
            "gaussian" => Ok(XLaw::Gaussian),
            "rademacher" => Ok(XLaw::Rademacher),
            other => validation(format!("unknown x_law '{other}'")),
        }
    }
}

/// Named law `ν` of the squared output weights `a²`.
///
/// Text form: `delta:v`, `two_point:v1,v2,w` (mass `w` at `v1`) or
/// `uniform:a,b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NuSpec {
    Delta(f64),
    TwoPoint { v1: f64, v2: f64, w: f64 },
    Uniform { a: f64, b: f64 },
}

impl NuSpec {
    pub fn measure(&self) -> Result<SpectralMeasure> {
        match *self {
            NuSpec::Delta(v) => Ok(SpectralMeasure::dirac(v)),
            NuSpec::TwoPoint { v1, v2, w } => {
                SpectralMeasure::from_atoms(vec![(v1, w), (v2, 1.0 - w)])
            }
            NuSpec::Uniform { a, b } => SpectralMeasure::uniform(a, b),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NuSpec::Delta(v) => v,
            NuSpec::TwoPoint { v1, v2, w } => {
                if rng.gen::<f64>() < w {
                    v1
                } else {
                    v2
                }
            }
            NuSpec::Uniform { a, b } => a + (b - a) * rng.gen::<f64>(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NuSpec::Delta(v) => v.is_finite() && v >= 0.0,
            NuSpec::TwoPoint { v1, v2, w } => {
                v1.is_finite()
                    && v2.is_finite()
                    && v1 >= 0.0
                    && v2 >= 0.0
                    && (0.0..=1.0).contains(&w)
            }
            NuSpec::Uniform { a, b } => a.is_finite() && b.is_finite() && 0.0 <= a && a < b,
        };
        if ok {
            Ok(())
        } else {
            validation(format!(
                "invalid nu '{self}': needs finite nonnegative support"
            ))
        }
    }
}

impl fmt::Display for NuSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NuSpec::Delta(v) => write!(f, "delta:{v}"),
            NuSpec::TwoPoint { v1, v2, w } => write!(f, "two_point:{v1},{v2},{w}"),
            NuSpec::Uniform { a, b } => write!(f, "uniform:{a},{b}"),
        }
    }
}

impl FromStr for NuSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<NuSpec> {
        let bad = || Error::Validation(format!("cannot parse nu '{s}'"));
        let (head, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let values: Vec<f64> = args
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let nu = match (head.trim(), values.as_slice()) {
            ("delta", &[v]) => NuSpec::Delta(v),
            ("two_point", &[v1, v2, w]) => NuSpec::TwoPoint { v1, v2, w },
            ("uniform", &[a, b]) => NuSpec::Uniform { a, b },
            _ => return Err(bad()),
        };
        nu.validate()?;
        Ok(nu)
    }
}

impl TryFrom<String> for NuSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<NuSpec> {
        s.parse()
    }
}

impl From<NuSpec> for String {
    fn from(nu: NuSpec) -> String {
        nu.to_string()
    }
}

/// Sizes, laws and seed of one draw of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub x_law: XLaw,
    pub nu: NuSpec,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelParams {
    /// `n / (d p)`.
    pub fn gamma1(&self) -> f64 {
        self.n as f64 / (self.d * self.p) as f64
    }

    /// `p / d`.
    pub fn gamma2(&self) -> f64 {
        self.p as f64 / self.d as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 2 || self.p < 2 {
            return validation(format!(
                "n, d and p must all be at least 2 (got {}, {}, {})",
                self.n, self.d, self.p
            ));
        }
        self.nu.validate()
    }
}

/// Stream ids of the random matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    X = 1,
    W = 2,
    D2 = 3,
    XTilde = 4,
    Surrogate = 5,
}

/// Generator for one named matrix of the draw with the given seed.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    // Filled row by row so the stream order matches the row-major layout.
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// One draw of `X`, `W` and `D²`.
#[derive(Clone, Debug)]
pub struct Model {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub d2: Vec<f64>,
    pub seed: u64,
}

impl Model {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    /// `XW/√d`.
    pub fn preactivation(&self) -> DMatrix<f64> {
        &self.x * &self.w / (self.d() as f64).sqrt()
    }

    /// `XXᵀ/d`.
    pub fn data_gram(&self) -> DMatrix<f64> {
        &self.x * self.x.transpose() / self.d() as f64
    }

    /// `(1/p) Y D² Yᵀ` for an `n × p` feature matrix `Y`.
    fn feature_gram(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(y.nrows(), y.ncols(), |i, r| y[(i, r)] * self.d2[r].sqrt());
        &scaled * scaled.transpose() / self.p() as f64
    }
}

/// Draws `W` (`d × p`) and `D²` exactly as [`sample_model`] does for the
/// same seed.
pub fn sample_weights(d: usize, p: usize, nu: &NuSpec, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let w = gaussian_matrix(d, p, &mut stream_rng(seed, Stream::W));
    let mut rng = stream_rng(seed, Stream::D2);
    let d2 = (0..p).map(|_| nu.sample(&mut rng)).collect();
    (w, d2)
}

/// Draws `X`, `W` and `D²` for the parameters.
pub fn sample_model(params: &ModelParams) -> Result<Model> {
    params.validate()?;
    if params.n > DEFAULT_N_CAP {
        return Err(Error::ResourceCap(format!(
            "n = {} exceeds the cap {DEFAULT_N_CAP}",
            params.n
        )));
    }
    let (n, d, p) = (params.n, params.d, params.p);
    let mut rng = stream_rng(params.seed, Stream::X);
    let x = match params.x_law {
        XLaw::Gaussian => gaussian_matrix(n, d, &mut rng),
        XLaw::Rademacher => {
            let data: Vec<f64> = (0..n * d)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            DMatrix::from_row_slice(n, d, &data)
        }
    };
    let (w, d2) = sample_weights(d, p, &params.nu, params.seed);
    Ok(Model {
        x,
        w,
        d2,
        seed: params.seed,
    })
}

fn apply(z: &DMatrix<f64>, f: impl Fn(f64) -> Result<f64>) -> Result<DMatrix<f64>> {
    let mut out = z.clone();
    for v in out.iter_mut() {
        let y = f(*v)?;
        if !y.is_finite() {
            return Err(Error::Evaluation(format!(
                "activation is not finite at {v}"
            )));
        }
        *v = y;
    }
    Ok(out)
}

/// `K = (XXᵀ/d) ⊙ (Y D² Yᵀ/p)` with `Y = φ(XW/√d)`.
pub fn build_k(model: &Model, phi: &Activation) -> Result<DMatrix<f64>> {
    let y = apply(&model.preactivation(), |z| Ok(phi.phi(z)))?;
    Ok(model.data_gram().component_mul(&model.feature_gram(&y)))
}

/// Conjugate kernel `(1/p) σ(XW/√d) σ(XW/√d)ᵀ`, of rank at most `p`.
pub fn build_k_ck(model: &Model, act: &Activation) -> Result<DMatrix<f64>> {
    let s = apply(&model.preactivation(), |z| act.sigma(z))?;
    Ok(&s * s.transpose() / model.p() as f64)
}

/// `K_ntk = K_ck + K`.
pub fn build_k_ntk(model: &Model, act: &Activation) -> Result<DMatrix<f64>> {
    Ok(build_k_ck(model, act)? + build_k(model, act)?)
}

/// Gaussian-equivalent kernel `K̃` with `ψ(X̃)` from an independent `n × p`
/// Gaussian matrix on the model's `XTilde` stream.
pub fn build_k_tilde(
    model: &Model,
    act: &Activation,
    stats: &ActivationStats,
) -> Result<DMatrix<f64>> {
    let (n, p) = (model.n(), model.p());
    let x_tilde = gaussian_matrix(n, p, &mut stream_rng(model.seed, Stream::XTilde));
    let psi = apply(&x_tilde, |z| Ok(act.phi(z) - stats.c - stats.alpha * z))?;
    let y = model.preactivation() * stats.alpha + psi;
    Ok(model.data_gram().component_mul(&model.feature_gram(&y)))
}

/// Gram matrix `G Gᵀ/(dp)` of `n` rows drawn i.i.d. from `N(0, Q)` through
/// the symmetric square root of `Q`.
pub fn gaussian_gram_surrogate(q: &TensorQ, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return validation("surrogate needs at least one row");
    }
    if n > DEFAULT_N_CAP {
        return Err(Error::ResourceCap(format!(
            "n = {n} exceeds the cap {DEFAULT_N_CAP}"
        )));
    }
    let root = linalg::psd_sqrt(&q.flat, PSD_TOLERANCE)?;
    let z = gaussian_matrix(n, q.dim(), &mut stream_rng(seed, Stream::Surrogate));
    let g = z * root;
    Ok(&g * g.transpose() / q.dim() as f64)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn spectrum(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    linalg::sym_eigenvalues(matrix)
}

/// Kernels that can be simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    K,
    Ntk,
    KTilde,
    Ck,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::K,
        KernelKind::Ntk,
        KernelKind::KTilde,
        KernelKind::Ck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::K => "k",
            KernelKind::Ntk => "ntk",
            KernelKind::KTilde => "k_tilde",
            KernelKind::Ck => "ck",
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<KernelKind> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown kernel '{s}'")))
    }
}

/// Kernels of one draw, built on demand and cached.
pub struct KernelEnsemble {
    pub model: Model,
    activation: Activation,
    stats: Option<ActivationStats>,
    cache: [Option<DMatrix<f64>>; 4],
}

impl KernelEnsemble {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Ok(KernelEnsemble {
            model: sample_model(params)?,
            activation: params.activation.clone(),
            stats: None,
            cache: Default::default(),
        })
    }

    pub fn get(&mut self, kind: KernelKind) -> Result<&DMatrix<f64>> {
        let slot = KernelKind::ALL
            .iter()
            .position(|&k| k == kind)
            .expect("known kernel");
        if self.cache[slot].is_none() {
            let m = match kind {
                KernelKind::K => build_k(&self.model, &self.activation)?,
                KernelKind::Ck => build_k_ck(&self.model, &self.activation)?,
                KernelKind::Ntk => {
                    let k = self.get(KernelKind::K)?.clone();
                    k + self.get(KernelKind::Ck)?
                }
                KernelKind::KTilde => {
                    let stats = match self.stats {
                        Some(s) => s,
                        None => hermite_stats(&self.activation, DEFAULT_ORDER)?,
                    };
                    self.stats = Some(stats);
                    build_k_tilde(&self.model, &self.activation, &stats)?
                }
            };
            self.cache[slot] = Some(m);
        }
        Ok(self.cache[slot].as_ref().expect("filled above"))
    }
}

/// Eigenvalues of the requested kernels for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub spectra: Vec<(KernelKind, Vec<f64>)>,
}

impl SeedRun {
    pub fn eigenvalues(&self, kind: KernelKind) -> Option<&[f64]> {
        self.spectra
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| v.as_slice())
    }
}

/// Runs the given seeds in parallel with at most `jobs` threads (`0` uses
/// the rayon default). Results are returned in seed order.
pub fn batch_spectra(
    params: &ModelParams,
    kinds: &[KernelKind],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SeedRun>> {
    params.validate()?;
    let run = |&seed: &u64| -> Result<SeedRun> {
        let mut ens = KernelEnsemble::new(&ModelParams {
            seed,
            ..params.clone()
        })?;
        let spectra = kinds
            .iter()
            .map(|&kind| Ok((kind, spectrum(ens.get(kind)?)?)))
            .collect::<Result<_>>()?;
        Ok(SeedRun { seed, spectra })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Validation(format!("cannot build thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(run).collect())
}

/// ESD of the pooled eigenvalues of several runs of equal size, which is
/// the average of the per-run ESDs.
pub fn mean_esd(runs: &[&[f64]]) -> Result<SpectralMeasure> {
    let pooled: Vec<f64> = runs.iter().flat_map(|r| r.iter().copied()).collect();
    SpectralMeasure::empirical(&pooled)
}

/// One eigenvalue per line under the header `eigenvalue`.
pub fn eigenvalues_csv(values: &[f64]) -> String {
    let mut out = String::from("eigenvalue\n");
    let mut buf = ryu::Buffer::new();
    for &v in values {
        out.push_str(buf.format(v));
        out.push('\n');
    }
    out
}

/// Histogram with equal-width bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

/// Upper bound on the number of Freedman–Diaconis bins.
pub const MAX_BINS: usize = 2000;

impl Histogram {
    /// Bins `[edges[i], edges[i+1])`, the last one closed.
    pub fn with_edges(samples: &[f64], edges: Vec<f64>) -> Result<Histogram> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return validation("histogram edges must be strictly increasing");
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0; bins];
        let (lo, hi) = (edges[0], edges[bins]);
        let width = (hi - lo) / bins as f64;
        for &x in samples {
            if !(lo..=hi).contains(&x) {
                continue;
            }
            let mut k = (((x - lo) / width) as usize).min(bins - 1);
            // Correct the guess against the actual edges.
            while k > 0 && x < edges[k] {
                k -= 1;
            }
            while k + 1 < bins && x >= edges[k + 1] {
                k += 1;
            }
            counts[k] += 1;
        }
        Ok(Histogram {
            edges,
            counts,
            total: samples.len(),
        })
    }

    /// Freedman–Diaconis bin width `2·IQR·N^{-1/3}` over the sample range.
    pub fn freedman_diaconis(samples: &[f64]) -> Result<Histogram> {
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return validation("histogram needs finite samples");
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
        let bins = if hi > lo && width > 0.0 {
            (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS)
        } else {
            1
        };
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let step = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * step).collect();
        edges.push(hi);
        Histogram::with_edges(&sorted, edges)
    }

    /// Count per bin over `total · width`.
    pub fn densities(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, e)| c as f64 / (self.total as f64 * (e[1] - e[0])))
            .collect()
    }

    /// Fraction of samples in bins that lie inside `[a, b]`.
    pub fn mass_within(&self, a: f64, b: f64) -> f64 {
        let inside: usize = self
            .counts
            .iter()
            .zip(self.edges.windows(2))
            .filter(|(_, e)| e[0] >= a && e[1] <= b)
            .map(|(&c, _)| c)
            .sum();
        inside as f64 / self.total as f64
    }

    /// `bin_left,bin_right,count,density` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count,density\n");
        let mut buf = ryu::Buffer::new();
        for ((e, &c), dens) in self
            .edges
            .windows(2)
            .zip(&self.counts)
            .zip(self.densities())
        {
            out.push_str(buf.format(e[0]));
            out.push(',');
            out.push_str(buf.format(e[1]));
            out.push_str(&format!(",{c},"));
            out.push_str(buf.format(dens));
            out.push('\n');
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}
