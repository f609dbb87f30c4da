use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaze-aware")).args(args).output().expect("binary runs")
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn synth(out: &Path, seed: &str) -> Output {
    let out = out.to_str().unwrap();
    run(&["synth", "--seed", seed, "--width", "64", "--height", "48", "--frames", "6", "--annotations", "50", "--out", out])
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(synth(&a, "4").status.code(), Some(0));
    assert_eq!(synth(&b, "4").status.code(), Some(0));
    assert_eq!(synth(&c, "5").status.code(), Some(0));
    let (da, db) = (dir_bytes(&a), dir_bytes(&b));
    assert!(da.contains_key("flow.mflo") && da.contains_key("annotations.csv"));
    assert_eq!(da, db);
    assert_ne!(da, dir_bytes(&c));
}

#[test]
fn estimate_and_fg_read_a_package() {
    let tmp = tempfile::tempdir().unwrap();
    let pkg = tmp.path().join("pkg");
    assert_eq!(synth(&pkg, "1").status.code(), Some(0));
    let est = tmp.path().join("est");
    let out = run(&["estimate", "--input", pkg.to_str().unwrap(), "--out", est.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mass = fs::read_to_string(est.join("mass.csv")).unwrap();
    assert_eq!(mass.lines().count(), 7, "{mass}");
    assert!(est.join("awareness_000005.pgm").exists());
    // the run report goes to stderr as JSON
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["command"], "estimate");

    let fg = tmp.path().join("fg");
    let out = run(&["fg", "--input", pkg.to_str().unwrap(), "--out", fg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fg.join("awareness_000000.pgm").exists());
}

#[test]
fn gradcheck_exits_zero() {
    let out = run(&["gradcheck", "--seeds", "1", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("term,max_rel_error,checked,skipped\n"), "{csv}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--width", "many"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"weights": {"alpha_bogus": 1.0}}"#).unwrap();
    let out = run(&["gradcheck", "--seeds", "1", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha_bogus"));
}

#[test]
fn missing_input_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["estimate", "--input", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let pkg = tmp.path().join("pkg");
    assert_eq!(synth(&pkg, "2").status.code(), Some(0));
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"fit_weights": {"alpha_s_a": 1e308}}"#).unwrap();
    let est = tmp.path().join("est");
    let (pkg, cfg, est) = (pkg.to_str().unwrap(), cfg.to_str().unwrap(), est.to_str().unwrap());
    let out = run(&["estimate", "--input", pkg, "--method", "variational", "--config", cfg, "--out", est]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
