//! End-to-end runs of the `hjlab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn hjlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hjlab(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_threads_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hjlab(&["constants", "--threads", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gamma_below_one_is_rejected_citing_in1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[problem]\ngamma = 0.9\n");
    let out = hjlab(&["solve", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("(In1)"), "{err}");
}

#[test]
fn syntax_error_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "seed = 3\n[domain]\nn = \n");
    let out = hjlab(&["constants", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_config_file_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hjlab(&["constants", "--config", "does-not-exist.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn audit_is_deterministic_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a.toml", "[experiment]\nsamples = 2000\n");
    let run = |seed: &str, out: &str| {
        let o = hjlab(&["bernstein-audit", "--config", &cfg, "--seed", seed, "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(tmp.path().join(out).join("report.json")).unwrap()
    };
    let a = run("11", "a");
    let b = run("11", "b");
    let c = run("12", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(tmp.path().join("a/audit.csv").exists());
}

#[test]
fn manufactured_solve_writes_convergence_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "mms.toml",
        "[domain]\nkind = \"box\"\nn = 9\n[problem]\nmanufactured = true\n\
         [experiment]\nresolutions = [9, 17, 33]\n[output]\ndir = \"mms\"\n",
    );
    let out = hjlab(&["solve", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("mms");
    let table = std::fs::read_to_string(dir.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(dir.join("convergence.svg").exists());
    let rep = report(&dir);
    assert_eq!(rep["schema"], 1);
    assert_eq!(rep["status"], "ok");
    assert!(rep["results"]["order"].as_f64().unwrap() >= 1.9);
}

#[test]
fn failed_invariant_exits_one_and_is_listed() {
    let tmp = tempfile::tempdir().unwrap();
    // an order threshold no second-order scheme can meet
    let cfg = write(
        tmp.path(),
        "strict.toml",
        "[domain]\nkind = \"box\"\nn = 9\n[problem]\nmanufactured = true\n\
         [experiment]\nresolutions = [9, 17]\nmin_order = 3.5\n",
    );
    let out = hjlab(&["solve", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAILED: observed L-infinity order"));
    let rep = report(&tmp.path().join("o"));
    assert_eq!(rep["status"], "failed");
}

#[test]
fn ergodic_run_reports_lambda_and_norms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "erg.toml",
        "[domain]\nkind = \"torus\"\ndim = 2\nn = 16\n[problem]\ngamma = 2.0\n\
         b = { family = \"constant\", value = 0.25 }\n",
    );
    let out = hjlab(&["ergodic", "--config", &cfg, "--out", "e"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("e");
    let rep = report(&dir);
    let lambda = rep["results"]["lambda"].as_f64().unwrap();
    assert!((lambda - 0.25).abs() < 1e-10, "{lambda}");
    assert!(dir.join("norms.csv").exists());
}

#[test]
fn mfg_without_section_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hjlab(&["mfg", "--out", "m"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&tmp.path().join("m"))["status"], "error");
}
