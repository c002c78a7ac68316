use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(verb: &str, config: &str, dir: &Path, extra: &[&str]) -> (i32, String) {
    let cfg = dir.join(format!("{verb}.json"));
    fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_horodual"))
        .arg(verb)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

const SPHERE: &str = r#"{"schema": "horodual.run/1", "n": 3, "surface": {"family": "geodesic_sphere", "radius": 1.0}, "grid": {"kind": "low_discrepancy", "count": 60}}"#;

#[test]
fn verify_sphere_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run("verify", SPHERE, dir.path(), &[]);
    assert_eq!(code, 0, "{text}");
    let r = report(dir.path());
    assert_eq!(r["status"], "pass");
    let checks = r["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 11);
    for c in checks {
        assert_eq!(c["status"], "pass", "{c}");
        assert!(c["max_deviation"].as_f64().is_some());
    }
    let csv = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn zero_tolerance_fails_with_deviations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SPHERE.replace(r#""grid""#, r#""checks": ["dual_metric", "de_sitter"], "grid""#);
    let (code, _) = run("verify", &cfg, dir.path(), &["--tol", "0"]);
    assert_eq!(code, 1);
    for c in report(dir.path())["checks"].as_array().unwrap() {
        assert_eq!(c["status"], "fail");
        assert!(c["max_deviation"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn invalid_configurations_exit_2_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SPHERE.replace(r#""grid""#, r#""checks": ["not_a_check"], "grid""#);
    let (code, text) = run("verify", &cfg, dir.path(), &[]);
    assert_eq!(code, 2);
    assert!(text.contains("unknown check"));
    assert!(!dir.path().join("out/report.json").exists());
    let (code, _) = run("verify", SPHERE, dir.path(), &["--tol", "-1"]);
    assert_eq!(code, 2);
    let (code, _) = run("verify", "{not json", dir.path(), &[]);
    assert_eq!(code, 2);
    let (code, _) = run("admissible", SPHERE, dir.path(), &[]);
    assert_eq!(code, 2);
}

#[test]
fn same_seed_same_payload() {
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timing_ms");
        v
    };
    let cfg = r#"{"schema": "horodual.run/1", "n": 4, "surface": {"family": "klein_quadric", "axes": [0.3, 0.5, 0.7, 0.4]}, "grid": {"kind": "random", "count": 30}, "checks": ["dual_metric", "isometry_equivariance"]}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run("verify", cfg, a.path(), &["--seed", "42"]).0, 0);
    assert_eq!(run("verify", cfg, b.path(), &["--seed", "42"]).0, 0);
    let (ra, rb) = (strip(report(a.path())), strip(report(b.path())));
    assert_eq!(ra["seed"], 42);
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
}

#[test]
fn reconstruct_constant_factor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": "horodual.run/1", "n": 3, "factor": {"type": "constant", "value": 1.0}, "mesh": {"model": "poincare"}}"#;
    let (code, text) = run("reconstruct", cfg, dir.path(), &["--grid", "300"]);
    assert_eq!(code, 0, "{text}");
    let r = report(dir.path());
    assert_eq!(r["admissibility"]["class"], "c_admissible");
    let rt = &r["checks"][0];
    assert_eq!(rt["name"], "roundtrip");
    assert!(rt["max_deviation"].as_f64().unwrap() <= 1e-9);
    assert_eq!(r["mesh"]["vertices"], 800);
    let off = fs::read_to_string(dir.path().join("out/mesh.off")).unwrap();
    assert!(off.starts_with("OFF\n800 "));
}

#[test]
fn reconstruct_rejects_the_round_factor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": "horodual.run/1", "n": 3, "factor": {"type": "constant", "value": 0.0}}"#;
    let (code, text) = run("reconstruct", cfg, dir.path(), &["--grid", "200"]);
    assert_eq!(code, 1);
    assert!(text.contains("boundary: Hessian eigenvalues 0"), "{text}");
    assert_eq!(report(dir.path())["admissibility"]["class"], "boundary");
}

#[test]
fn reconstruct_perturbed_factor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": "horodual.run/1", "n": 3, "factor": {"type": "sum", "terms": [{"type": "constant", "value": 1.0}, {"type": "quadratic", "q": [[0.05, 0, 0.01], [0, -0.03, 0], [0.01, 0, 0.02]]}]}}"#;
    let (code, text) = run("reconstruct", cfg, dir.path(), &["--grid", "150"]);
    assert_eq!(code, 0, "{text}");
    let r = report(dir.path());
    assert!(r["admissibility"]["worst_margin"].as_f64().unwrap() > 0.0);
    assert!(r["checks"][0]["max_deviation"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn admissible_reports_both_routes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": "horodual.run/1", "n": 4, "factor": {"type": "constant", "value": 1.0}, "grid": {"kind": "product", "per_axis": 4}}"#;
    let (code, _) = run("admissible", cfg, dir.path(), &[]);
    assert_eq!(code, 0);
    let r = report(dir.path());
    assert_eq!(r["admissibility"]["class"], "c_admissible");
    assert!((r["admissibility"]["min_kstar"].as_f64().unwrap() - 0.4323324).abs() < 1e-7);
    assert!(r["admissibility"]["route_gap"].as_f64().unwrap() < 1e-6);
    let table = fs::read_to_string(dir.path().join("out/admissibility.csv")).unwrap();
    assert_eq!(table.lines().count(), 65);
}

#[test]
fn export_klein_sphere_has_constant_radius() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": "horodual.run/1", "n": 3, "surface": {"family": "geodesic_sphere", "radius": 1.0}, "mesh": {"model": "klein", "rows": 20, "cols": 40}}"#;
    let (code, _) = run("export", cfg, dir.path(), &[]);
    assert_eq!(code, 0);
    let off = fs::read_to_string(dir.path().join("out/mesh.off")).unwrap();
    let mut lines = off.lines();
    assert_eq!(lines.next(), Some("OFF"));
    let counts: Vec<usize> = lines.next().unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(counts[0], 800);
    for line in lines.by_ref().take(800) {
        let r: f64 = line.split_whitespace().map(|v| v.parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((r - 1f64.tanh()).abs() < 1e-9);
        assert!((r - 0.7615942).abs() < 1e-7);
    }
    assert_eq!(lines.count(), counts[1]);
}

#[test]
fn dualize_writes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": "horodual.run/1", "n": 3, "surface": {"family": "totally_geodesic_hyperplane", "pole": [0, 0, 0, 1]}, "grid": {"kind": "low_discrepancy", "count": 25}}"#;
    let (code, _) = run("dualize", cfg, dir.path(), &[]);
    assert_eq!(code, 0);
    let table = fs::read_to_string(dir.path().join("out/dual.csv")).unwrap();
    assert_eq!(table.lines().count(), 26);
    assert!(table.lines().next().unwrap().starts_with("sample,x0,"));
}
