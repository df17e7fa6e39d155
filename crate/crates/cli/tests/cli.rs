use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ntk-spectra"));
    cmd.env_remove("NTK_SPECTRA_CACHE");
    cmd
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

/// The single JSON line written to standard error on failure.
fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn theory_smoke_writes_theory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "theory",
            "--activation",
            "neg_part",
            "--nu",
            "delta:1",
            "--gamma1",
            "0.5",
            "--gamma2",
            "0.8",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("theory.csv")).unwrap();
    assert!(csv.starts_with("x,density\n"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["params"]["gamma1"], 0.5);
    assert_eq!(report["theory"]["route"], "special");
}

#[test]
fn tensor_check_exact_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "tensor",
            "--d",
            "30",
            "--p",
            "20",
            "--alpha",
            "1",
            "--beta",
            "0",
            "--check-exact",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let json = stdout_json(&out);
    assert!(json["max_abs_diff"].as_f64().unwrap() <= 1e-8);
    assert!(json["eigenvector_residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn fig1c_config_reports_a_gap() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_config("fig1c.json");
    let out = run(
        &[
            "compare",
            "--config",
            config.to_str().unwrap(),
            "--seeds",
            "0",
            "--output",
            "out",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    assert!(text.contains("\"disconnected_support\": true"));
    for name in [
        "theory.csv",
        "esd_k.csv",
        "histogram_k.csv",
        "diagnostics.json",
    ] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn scaffold_round_trips_through_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["scaffold", "--output", "cfg.json"], dir.path());
    assert!(out.status.success());
    let printed = run(&["scaffold"], dir.path());
    assert_eq!(
        printed.stdout,
        fs::read(dir.path().join("cfg.json")).unwrap()
    );
    for sub in ["theory", "simulate", "compare", "tensor", "moments"] {
        let mut args = vec![sub, "--config", "cfg.json", "--output", sub];
        if matches!(sub, "simulate" | "compare") {
            // Keeps the run short; the file itself is used unmodified.
            args.extend(["--seeds", "0"]);
        }
        let out = run(&args, dir.path());
        assert!(
            out.status.success(),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice::<Value>(&out.stdout).unwrap();
    }
    assert!(dir.path().join("simulate/esd_ntk.csv").exists());
    assert!(dir.path().join("moments/moments.csv").exists());
    assert!(dir.path().join("tensor/tensor_eigenvalues.csv").exists());
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "theory", "simulate", "compare", "tensor", "moments", "scaffold",
    ] {
        let out = run(&[sub, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage:"));
    }
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn invalid_input_exits_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"gamma1": 0.5, "gamma2": 0.8, "typo": 1}"#,
    )
    .unwrap();
    let cases: [&[&str]; 5] = [
        &["theory", "--config", "bad.json"],
        &[
            "theory", "--nu", "bogus", "--gamma1", "0.5", "--gamma2", "0.8",
        ],
        &["theory", "--gamma1", "-1", "--gamma2", "0.8"],
        &["compare", "--n", "abc"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = stderr_json(&out);
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[test]
fn resource_caps_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["tensor", "--d", "100", "--p", "100"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "resource_cap");
    let out = run(
        &[
            "simulate", "--n", "5000", "--d", "50", "--p", "40", "--seeds", "0",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numerical_failure_exits_two() {
    // α² overflows, so the tensor has non-finite entries.
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "tensor", "--d", "4", "--p", "3", "--beta", "1e200", "--alpha", "1e200",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "numerical");
}

#[test]
fn cache_returns_identical_theory() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = [
        "theory",
        "--nu",
        "two_point:1,4,0.5",
        "--gamma1",
        "0.5",
        "--gamma2",
        "0.8",
    ];
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = bin()
            .args(args)
            .args(["--output", name])
            .env("NTK_SPECTRA_CACHE", &cache)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(fs::read(dir.path().join(name).join("theory.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    // Without the cache the result is the same bytes.
    let out = run(
        &[
            "theory",
            "--nu",
            "two_point:1,4,0.5",
            "--gamma1",
            "0.5",
            "--gamma2",
            "0.8",
            "--output",
            "c",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir.path().join("c/theory.csv")).unwrap(),
        outputs[0]
    );
}

#[test]
fn compare_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run(
            &[
                "compare",
                "--n",
                "300",
                "--d",
                "20",
                "--p",
                "15",
                "--seeds",
                "3,4",
                "--kernels",
                "k,k_tilde",
                "--activation",
                "neg_part",
                "--output",
                name,
            ],
            dir.path(),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in [
        "theory.csv",
        "esd_k.csv",
        "esd_k_tilde.csv",
        "histogram_k.csv",
        "histogram_k_tilde.csv",
    ] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}
