use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn xphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xphase")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn cyclotron_closes_and_writes_trajectory() {
    let out = tempfile::tempdir().unwrap();
    let res = xphase(&["simulate", "--config", s(&fixture("cyclotron.json")), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let r = report(out.path());
    assert_eq!(r["schema"], "xphase/1");
    assert_eq!(r["seed"], 0);
    assert!(r["results"]["return_residual"].as_f64().unwrap() < 1e-6);
    let csv = fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s,q1,q2,q3,t,p1,p2,p3,E,H_e_drift"));
    assert_eq!(lines.count(), 6285);
}

#[test]
fn equivariance_reports_witness() {
    let out = tempfile::tempdir().unwrap();
    let res = xphase(&["equivariance", "--config", s(&fixture("equivariance_galilei.json")), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(0));
    let r = report(out.path());
    assert_eq!(r["results"]["verdict"], "NOT-EQUIVARIANT");
    assert_eq!(r["results"]["witness"], serde_json::json!(["v_x", "d_x"]));
    assert_eq!(r["results"]["witness_value"], -1.0);
}

#[test]
fn boost_table_row() {
    let out = tempfile::tempdir().unwrap();
    let res = xphase(&["boost-table", "--config", s(&fixture("boost_lorentz.json")), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(out.path().join("boost_table.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert!((col("q1") - 1.25).abs() < 1e-12);
    assert!((col("t") + 0.75).abs() < 1e-12);
    assert!((col("E") - 1.25).abs() < 1e-12);
}

#[test]
fn errors_exit_two_with_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"version": "xphase/1", "kind": "simulate", "constants": {"alpha": 2}}"#).unwrap();
    let res = xphase(&["simulate", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8(res.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "schema");
    assert_eq!(err["key"], "constants.alpha");

    let res = xphase(&["cocycle", "--config", s(&fixture("cyclotron.json")), "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    let res = xphase(&["simulate", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failing_gate_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.json");
    let text = fs::read_to_string(fixture("static_e.json")).unwrap().replace(
        r#""integrator""#,
        r#""gates": { "drift": 1e-300 }, "integrator""#,
    );
    fs::write(&cfg, text).unwrap();
    let res = xphase(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(report(&dir.path().join("o"))["passed"], false);
}

#[test]
fn seed_override_is_recorded_and_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let res = xphase(&["cocycle", "--config", s(&fixture("cocycle_galilei.json")), "--out", s(dir.path()), "--seed", "42"]);
        assert_eq!(res.status.code(), Some(0));
    }
    let (ra, rb) = (fs::read(a.path().join("report.json")).unwrap(), fs::read(b.path().join("report.json")).unwrap());
    assert_eq!(ra, rb);
    assert_eq!(report(a.path())["seed"], 42);
}

#[test]
fn batch_directory_runs_each_scenario() {
    let cfgs = tempfile::tempdir().unwrap();
    for name in ["equivariance_galilei.json", "equivariance_alpha.json"] {
        fs::copy(fixture(name), cfgs.path().join(name)).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let res = xphase(&["equivariance", "--config", s(cfgs.path()), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(report(&out.path().join("equivariance_alpha"))["results"]["verdict"], "EQUIVARIANT");
    assert_eq!(report(&out.path().join("equivariance_galilei"))["results"]["verdict"], "NOT-EQUIVARIANT");
}

#[test]
fn validate_accepts_shipped_fixtures() {
    let res = xphase(&["validate", "--config", s(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"))]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(String::from_utf8(res.stdout).unwrap().lines().count(), 8);
}
