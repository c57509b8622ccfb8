use std::path::Path;
use std::process::{Command, Output};

fn jacnuc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jacnuc")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY_ROF: &[&str] = &[
    "--set", "iterations=30",
    "--set", "batch_size=64",
    "--set", "hidden=8",
    "--set", "inner_dim=4",
    "--set", "fourier.features=4",
    "--set", "test_points=200",
    "--set", "objective_points=200",
    "--set", "eval_every=10",
    "--set", "heatmap_resolution=16",
];

fn rof_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["rof", "--n", "2", "--eta", "0.1", "--variant", "hutchinson", "--seed", "7", "--out", out];
    v.extend_from_slice(TINY_ROF);
    v.extend_from_slice(extra);
    v
}

#[test]
fn estimate_frob_sin_at_origin() {
    let o = jacnuc(&["estimate-frob", "--fn", "sin", "--n", "3", "--sigma", "1e-3", "--k", "100000", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let est: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("estimate"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((est - 3.0).abs() < 0.05, "{text}");
}

#[test]
fn selftest_passes() {
    let o = jacnuc(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn rof_writes_run_directory_and_config_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = jacnuc(&rof_args(a.to_str().unwrap(), &[]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "metrics.csv", "report.json", "arrays/heatmap.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let header = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(header.starts_with("iteration,objective,data_term,penalty_term,eta,mae\n"));

    let b = dir.path().join("b");
    let cfg = a.join("config.json");
    let o = jacnuc(&["rof", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")));
    assert_eq!(read(&a.join("config.json")), read(&b.join("config.json")));
    assert_eq!(read(&a.join("arrays/heatmap.csv")), read(&b.join("arrays/heatmap.csv")));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = jacnuc(&rof_args(out.to_str().unwrap(), &["--set", "etta=0.2"]));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("etta"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"eta": 0.5, "seed": 1, "unknown": true}"#).unwrap();
    let o = jacnuc(&["matrix-equiv", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_flags_and_invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = jacnuc(&["rof", "--n", "2", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = jacnuc(&["rof", "--n", "2", "--eta", "0.6", "--variant", "hutchinson", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = jacnuc(&["rof", "--n", "2", "--eta", "0.1", "--variant", "bogus", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let args = ["matrix-equiv", "--eta", "0.5", "--seed", "3", "--set", "factor_iterations=200", "--set", "subgradient_iterations=200", "--out", out.to_str().unwrap()];
    assert_eq!(code(&jacnuc(&args)), 0);
    assert_eq!(code(&jacnuc(&args)), 2);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&jacnuc(&forced)), 0);
}

#[test]
fn divergence_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = jacnuc(&rof_args(out.to_str().unwrap(), &["--set", "lr=1e200"]));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shrinkage_and_denoise_runs() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let o = jacnuc(&[
        "shrinkage", "--dim", "16", "--samples", "512", "--rank", "3", "--noise-std", "0.5", "--seed", "1", "--out",
        s.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(s.join("report.json")).unwrap()).unwrap();
    let summary = &report["summary"];
    assert!(summary["err_shrink"].as_f64().unwrap() < summary["err_identity"].as_f64().unwrap());

    let d = dir.path().join("d");
    let o = jacnuc(&[
        "denoise", "--manifold", "circle", "--ambient-dim", "4", "--samples", "64", "--noise-std", "0.2",
        "--iterations", "10", "--seed", "2", "--set", "hidden=8", "--set", "test_samples=32", "--set",
        "spectrum_points=4", "--out", d.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "metrics_supervised.csv", "metrics_n2n.csv", "arrays/spectra.csv", "arrays/directions.csv"] {
        assert!(d.join(f).exists(), "missing {f}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["lr_drop"]["at"], 8);
}
