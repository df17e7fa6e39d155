//! `ntk-spectra` command-line front end.
//!
//! Every subcommand reads an optional JSON config (as written by
//! `scaffold`) and applies flag overrides on top. Errors go to standard
//! error as one JSON line; the exit code is 1 for invalid input, 2 for
//! solver or numerical failures and 3 for resource caps.

use clap::{Args, Parser, Subcommand};
use ntk_spectra::free_ops::{h_matrix, q_moment_binomial, q_moment_formula, MAX_MOMENT_ORDER};
use ntk_spectra::pipeline::{
    run_experiment_with_theory, run_simulation, theory_with_diagnostics, ExperimentConfig,
    ExperimentReport, Resolved, Theory,
};
use ntk_spectra::sim::{
    eigenvalues_csv, sample_weights, stream_rng, KernelKind, NuSpec, Stream, XLaw,
};
use ntk_spectra::tensor::{build_q, build_qhat, exact_qhat_spectrum, verify_eigenvectors};
use ntk_spectra::{hermite_stats, Error, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Environment variable naming an optional theory cache directory.
const CACHE_ENV: &str = "NTK_SPECTRA_CACHE";
/// Tolerance of `tensor --check-exact`.
const EXACT_TOL: f64 = 1e-8;
/// Eigenvectors checked by `tensor --check-exact`.
const EIGENVECTOR_CHECKS: usize = 50;

#[derive(Parser, Debug)]
#[command(
    name = "ntk-spectra",
    version,
    about = "Limiting spectra of two-layer neural tangent kernels with n ~ dp, and matched simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the limiting density and write theory.csv and report.json.
    Theory(Common),
    /// Simulate the kernels and write their spectra and histograms.
    Simulate(Common),
    /// Theory, simulation and the distances between them.
    Compare(Common),
    /// Build the covariance tensor and compare numeric and exact spectra.
    Tensor(TensorArgs),
    /// Compare the trace formula for the tensor moments with direct traces.
    Moments(MomentArgs),
    /// Print a complete default config accepted by every subcommand.
    Scaffold(ScaffoldArgs),
}

/// Config file and overrides shared by the experiment subcommands.
#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Width.
    #[arg(long)]
    p: Option<usize>,
    /// n/(dp). Given without size flags, it replaces the config's sizes.
    #[arg(long)]
    gamma1: Option<f64>,
    /// p/d. Given without size flags, it replaces the config's sizes.
    #[arg(long)]
    gamma2: Option<f64>,
    /// identity, neg_part, abs, shifted_relu[:b] or table:<path>.
    #[arg(long)]
    activation: Option<String>,
    /// Law of a²: delta:v, two_point:v1,v2,w or uniform:a,b.
    #[arg(long, value_parser = parse_nu)]
    nu: Option<NuSpec>,
    /// Law of the data entries: gaussian or rademacher.
    #[arg(long, value_parser = parse_x_law)]
    x_law: Option<XLaw>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated kernels: k, ntk, k_tilde, ck.
    #[arg(long, value_delimiter = ',', value_parser = parse_kernel)]
    kernels: Option<Vec<KernelKind>>,
    /// Points of the theory grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Inversion offset of the MP maps.
    #[arg(long)]
    eta: Option<f64>,
    /// Parallel seed runs (0 uses all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (default: the config's, else the current directory).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print timings and solver diagnostics to standard error.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct TensorArgs {
    #[command(flatten)]
    common: Common,
    /// Scale α; defaults to the activation's.
    #[arg(long)]
    alpha: Option<f64>,
    /// Shift β; defaults to the activation's.
    #[arg(long)]
    beta: Option<f64>,
    /// Compare against the exact spectrum and check eigenvectors.
    #[arg(long)]
    check_exact: bool,
    /// Also write the dense tensor in binary form.
    #[arg(long)]
    binary: bool,
}

#[derive(Args, Debug)]
struct MomentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Highest moment order.
    #[arg(long, default_value_t = 5)]
    kmax: usize,
}

#[derive(Args, Debug)]
struct ScaffoldArgs {
    /// Write to this file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_nu(s: &str) -> std::result::Result<NuSpec, String> {
    s.parse::<NuSpec>().map_err(|e| e.to_string())
}

fn parse_x_law(s: &str) -> std::result::Result<XLaw, String> {
    s.parse::<XLaw>().map_err(|e| e.to_string())
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    s.parse::<KernelKind>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            report_error("usage", first.trim_start_matches("error: "), 1);
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            report_error(e.kind(), &e.to_string(), code);
            ExitCode::from(code as u8)
        }
    }
}

fn report_error(kind: &str, message: &str, code: i32) {
    let line = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Theory(c) => {
            let mut cfg = load_with_output(&c)?;
            cfg.seeds.clear();
            let report = experiment(&cfg, &c)?;
            print_summary(&report)
        }
        Command::Simulate(c) => {
            let cfg = load_with_output(&c)?;
            let report = run_simulation(&cfg)?;
            print_summary(&report)
        }
        Command::Compare(c) => {
            let cfg = load_with_output(&c)?;
            let report = experiment(&cfg, &c)?;
            print_summary(&report)
        }
        Command::Tensor(t) => tensor(&t),
        Command::Moments(m) => moments(&m),
        Command::Scaffold(s) => {
            let text = serde_json::to_string_pretty(&scaffold())? + "\n";
            match s.output {
                Some(path) => fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

/// The config `scaffold` prints: every field spelled out, sized for a
/// desk-scale comparison.
fn scaffold() -> ExperimentConfig {
    ExperimentConfig {
        n: Some(1000),
        d: Some(50),
        p: Some(40),
        kernels: vec![KernelKind::K, KernelKind::Ntk],
        ..ExperimentConfig::default()
    }
}

/// Reads the config and applies the flag overrides.
fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let sizes_given = c.n.is_some() || c.d.is_some() || c.p.is_some();
    if !sizes_given && (c.gamma1.is_some() || c.gamma2.is_some()) {
        cfg.n = None;
        cfg.d = None;
        cfg.p = None;
    }
    if sizes_given {
        // Ratios in the file describe the old sizes.
        if c.gamma1.is_none() {
            cfg.gamma1 = None;
        }
        if c.gamma2.is_none() {
            cfg.gamma2 = None;
        }
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = c.$field.clone() {
                cfg.$field = v.into();
            }
        };
    }
    set!(n);
    set!(d);
    set!(p);
    set!(gamma1);
    set!(gamma2);
    set!(activation);
    set!(nu);
    set!(x_law);
    set!(seeds);
    set!(kernels);
    set!(grid);
    set!(eta);
    set!(jobs);
    if let Some(out) = &c.output {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

/// [`load`] for subcommands that always write files.
fn load_with_output(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load(c)?;
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from("."));
    }
    Ok(cfg)
}

/// Theory (possibly cached) followed by the matched simulation.
fn experiment(cfg: &ExperimentConfig, c: &Common) -> Result<ExperimentReport> {
    let resolved = cfg.resolve()?;
    let start = Instant::now();
    let theory = cached_theory(cfg, &resolved)?;
    let secs = start.elapsed().as_secs_f64();
    let result = run_experiment_with_theory(cfg, &resolved, theory, secs);
    if c.verbose {
        if let Ok(report) = &result {
            let line = serde_json::json!({
                "timing": report.timing,
                "diagnostics": report.diagnostics,
            });
            eprintln!("{line}");
        }
    }
    result
}

fn cached_theory(cfg: &ExperimentConfig, resolved: &Resolved) -> Result<Theory> {
    let stats = hermite_stats(&resolved.activation, cfg.quadrature_order)?;
    let tc = cfg.theory_config();
    let compute =
        || theory_with_diagnostics(&resolved.nu, resolved.gamma1, resolved.gamma2, &stats, &tc);
    let dir = match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => return compute(),
    };
    let key = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "nu": cfg.nu,
        "gamma1": resolved.gamma1,
        "gamma2": resolved.gamma2,
        "stats": stats,
        "mp": tc.mp,
        "free": tc.free,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    let name: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let path = dir.join(format!("theory-{name}.json"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(theory) = serde_json::from_str::<Theory>(&text) {
            return Ok(theory);
        }
    }
    let theory = compute()?;
    fs::create_dir_all(&dir)?;
    write_atomic(&path, &serde_json::to_string(&theory)?)?;
    Ok(theory)
}

/// Writes through a temporary file so concurrent runs never read a
/// partial cache entry.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn print_summary(report: &ExperimentReport) -> Result<()> {
    let line = serde_json::json!({
        "theory": report.theory,
        "metrics": report.metrics,
        "pairwise": report.pairwise,
    });
    println!("{line}");
    Ok(())
}

/// Sizes, weights and `(α, β)` for the tensor subcommands.
struct TensorSetup {
    d: usize,
    p: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    nu: NuSpec,
    output: Option<PathBuf>,
}

fn tensor_setup(c: &Common, alpha: Option<f64>, beta: Option<f64>) -> Result<TensorSetup> {
    let cfg = load(c)?;
    let (d, p) = match (cfg.d, cfg.p) {
        (Some(d), Some(p)) => (d, p),
        _ => return Err(Error::Validation("the tensor needs --d and --p".into())),
    };
    if d < 1 || p < 1 {
        return Err(Error::Validation("d and p must be positive".into()));
    }
    let (alpha, beta) = match (alpha, beta) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let act = ntk_spectra::Activation::parse(&cfg.activation)?;
            let stats = hermite_stats(&act, cfg.quadrature_order)?;
            (a.unwrap_or(stats.alpha), b.unwrap_or(stats.beta_sq.sqrt()))
        }
    };
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Validation("alpha and beta must be finite".into()));
    }
    Ok(TensorSetup {
        d,
        p,
        alpha,
        beta,
        seed: cfg.seeds.first().copied().unwrap_or(0),
        nu: cfg.nu,
        output: cfg.output_dir,
    })
}

fn tensor(t: &TensorArgs) -> Result<()> {
    let s = tensor_setup(&t.common, t.alpha, t.beta)?;
    let (w, _) = sample_weights(s.d, s.p, &s.nu, s.seed);
    let q = build_qhat(&w, s.alpha, s.beta)?;
    let numeric = q.eigenvalues()?;
    let mut summary = serde_json::json!({
        "d": s.d,
        "p": s.p,
        "alpha": s.alpha,
        "beta": s.beta,
        "seed": s.seed,
        "min_eigenvalue": numeric.first(),
        "max_eigenvalue": numeric.last(),
    });
    let mut exact = None;
    let mut failure = None;
    if t.check_exact {
        let spectrum = exact_qhat_spectrum(&w, s.alpha, s.beta)?.sorted();
        let diff = spectrum
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut rng = stream_rng(s.seed, Stream::Surrogate);
        let vectors = verify_eigenvectors(&w, s.alpha, s.beta, EIGENVECTOR_CHECKS, &mut rng)?;
        summary["max_abs_diff"] = diff.into();
        summary["eigenvector_residual"] = vectors.worst().into();
        if diff > EXACT_TOL || vectors.worst() > EXACT_TOL {
            failure = Some(format!(
                "exact and numeric spectra differ: eigenvalues by {diff:.3e}, eigenvector residual {:.3e}",
                vectors.worst()
            ));
        }
        exact = Some(spectrum);
    }
    if let Some(dir) = &s.output {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("tensor_eigenvalues.csv"),
            eigenvalues_csv(&numeric),
        )?;
        if let Some(exact) = &exact {
            fs::write(dir.join("tensor_exact.csv"), eigenvalues_csv(exact))?;
        }
        if t.binary {
            let mut file = std::io::BufWriter::new(fs::File::create(dir.join("tensor.bin"))?);
            q.write_binary(&mut file)?;
        }
    }
    println!("{summary}");
    match failure {
        Some(msg) => Err(Error::Numerical(msg)),
        None => Ok(()),
    }
}

fn moments(m: &MomentArgs) -> Result<()> {
    if m.kmax == 0 || m.kmax > MAX_MOMENT_ORDER {
        return Err(Error::Validation(format!(
            "kmax must be in 1..={MAX_MOMENT_ORDER}"
        )));
    }
    let s = tensor_setup(&m.common, m.alpha, m.beta)?;
    let (w, d2) = sample_weights(s.d, s.p, &s.nu, s.seed);
    let d_diag: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();
    let q = build_q(&w, &d_diag, s.alpha, s.beta)?;
    let eig = q.eigenvalues()?;
    let beta_sq = s.beta * s.beta;
    let h = h_matrix(&w, &d2, s.alpha, beta_sq)?;
    let dim = eig.len() as f64;
    let mut csv = String::from("k,formula,direct,relative_error,binomial\n");
    let mut rows = Vec::new();
    for k in 1..=m.kmax {
        let formula = q_moment_formula(&w, &d2, s.alpha, beta_sq, k)?;
        let direct = eig.iter().map(|l| l.powi(k as i32)).sum::<f64>() / dim;
        let rel = (formula - direct).abs() / direct.abs();
        let binomial = if beta_sq == 0.0 {
            Some(q_moment_binomial(&h, s.d, k)?)
        } else {
            None
        };
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            ryu_fmt(formula),
            ryu_fmt(direct),
            ryu_fmt(rel),
            binomial.map(ryu_fmt).unwrap_or_default()
        ));
        rows.push(serde_json::json!({
            "k": k,
            "formula": formula,
            "direct": direct,
            "relative_error": rel,
            "binomial": binomial,
        }));
    }
    if let Some(dir) = &s.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("moments.csv"), csv)?;
    }
    println!(
        "{}",
        serde_json::json!({ "d": s.d, "p": s.p, "seed": s.seed, "moments": rows })
    );
    Ok(())
}

fn ryu_fmt(v: f64) -> String {
    // serde_json prints the shortest round-trip form.
    serde_json::Value::from(v).to_string()
}
