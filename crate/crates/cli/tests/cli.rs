use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn kurth(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kurth"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("KURTH_SEED")
        .env_remove("KURTH_N")
        .env_remove("KURTH_EPS")
        .output()
        .expect("binary runs")
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn checks(m: &Value) -> &Vec<Value> {
    m["checks"].as_array().unwrap()
}

/// Every listed output exists and every check carries a threshold.
fn assert_consistent(out: &Path, m: &Value) {
    assert_eq!(m["schema"], "v1");
    for name in m["outputs"].as_array().unwrap() {
        assert!(out.join(name.as_str().unwrap()).is_file(), "missing {name}");
    }
    for c in checks(m) {
        assert!(c["threshold"].is_number(), "check without threshold: {c}");
    }
}

#[test]
fn verify_family_passes_at_requested_tolerance() {
    let dir = TempDir::new().unwrap();
    let o = kurth(dir.path(), &["verify", "family", "--eps", "0.6", "--tol", "1e-9", "--n", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let m = manifest(dir.path());
    assert_consistent(dir.path(), &m);
    assert_eq!(m["passed"], true);
    assert!(checks(&m).iter().all(|c| c["threshold"].as_f64() == Some(1e-9)));
    let csv = fs::read_to_string(dir.path().join("family_residuals.csv")).unwrap();
    assert!(csv.starts_with("eps,t,r,p_r,beta,"));
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn verify_phi_at_equilibrium() {
    let dir = TempDir::new().unwrap();
    let o = kurth(dir.path(), &["verify", "phi", "--eps", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(dir.path());
    assert_consistent(dir.path(), &m);
    let rows = fs::read_to_string(dir.path().join("phi_checks.csv")).unwrap();
    let row: Vec<f64> = rows.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[2] - 2.0 * std::f64::consts::PI).abs() < 1e-15);
}

#[test]
fn perturbed_theorem_probe_is_reported_as_expected_nonzero() {
    let dir = TempDir::new().unwrap();
    let o = kurth(dir.path(), &["verify", "theorem", "--perturb", "0.01", "--n", "50"]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(dir.path());
    assert_consistent(dir.path(), &m);
    let probe = checks(&m).iter().find(|c| c["expected_nonzero"] == true).unwrap();
    assert!(probe["value"].as_f64().unwrap() > probe["threshold"].as_f64().unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("expected nonzero"));
}

#[test]
fn remaining_suites_pass() {
    for suite in ["core", "moments"] {
        let dir = TempDir::new().unwrap();
        let o = kurth(dir.path(), &["verify", suite, "--n", "50"]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        assert_consistent(dir.path(), &manifest(dir.path()));
    }
}

#[test]
fn failed_check_exits_one_and_keeps_manifest() {
    let dir = TempDir::new().unwrap();
    let o = kurth(dir.path(), &["verify", "core", "--tol", "1e-30", "--n", "50"]);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(dir.path());
    assert_eq!(m["passed"], false);
    assert!(checks(&m).iter().any(|c| c["pass"] == false));
}

#[test]
fn usage_errors_exit_two_with_manifest() {
    let cases: [&[&str]; 4] = [
        &["verify", "bogus"],
        &["simulate", "--n", "0"],
        &["convergence", "dt", "--levels", "0.01,0.005"],
        &["simulate", "--eps", "1.0"],
    ];
    for args in cases {
        let dir = TempDir::new().unwrap();
        let o = kurth(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let m = manifest(dir.path());
        assert_eq!(m["passed"], false);
        assert!(m["error"].is_string(), "{args:?}");
    }
}

#[test]
fn simulate_writes_outputs_and_is_reproducible() {
    let run = |dir: &Path| {
        let o = kurth(
            dir,
            &["--threads", "1", "simulate", "--eps", "0.3", "--n", "2000", "--steps", "40", "--particles", "--seed", "9"],
        );
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
        manifest(dir)
    };
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let m = run(a.path());
    run(b.path());
    assert_consistent(a.path(), &m);
    assert_eq!(m["seed"], 9);
    assert!(m["parameters"]["config"]["dt"].is_number());
    assert_eq!(m["data"]["diagnostics"].as_array().unwrap().len(), 5);
    for name in ["diagnostics.csv", "density.csv", "field.csv", "ensemble.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let particles = fs::read_to_string(a.path().join("ensemble.csv")).unwrap();
    assert!(particles.starts_with("r,p_r,beta,weight\n"));
    assert_eq!(particles.lines().count(), 2001);
}

#[test]
fn csv_numbers_round_trip() {
    let dir = TempDir::new().unwrap();
    let o = kurth(dir.path(), &["phi", "--eps", "0.5", "--t-end", "2", "--dt", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("phi.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,phi,phidot,phiddot,energy"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    // first integral of the scale-factor equation with alpha = 1
    for r in &rows {
        let energy = 0.5 * r[2] * r[2] - 1.0 / r[1] + 0.5 / (r[1] * r[1]);
        assert!((r[4] - energy).abs() < 1e-14);
        assert!((r[4] - (0.125 - 0.5)).abs() < 1e-9);
        assert_eq!(format!("{:.16e}", r[1]).parse::<f64>().unwrap(), r[1]);
    }
}

#[test]
fn environment_supplies_defaults() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_kurth"))
        .args(["sample", "--n", "10"])
        .env("KURTH_OUT", dir.path())
        .env("KURTH_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 77);
    assert_eq!(fs::read_to_string(dir.path().join("sample.csv")).unwrap().lines().count(), 11);
}

#[test]
fn convergence_table_has_one_row_per_level() {
    let dir = TempDir::new().unwrap();
    let o = kurth(dir.path(), &["convergence", "quad", "--levels", "8,16,24"]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_consistent(dir.path(), &manifest(dir.path()));
}
