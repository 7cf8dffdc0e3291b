use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uclab_core::acceptance::HALFPLANE_K2_CONFIG;

fn uclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/halfplane_k2.cfg")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_config_matches_the_suite() {
    assert_eq!(std::fs::read_to_string(config_path()).unwrap(), HALFPLANE_K2_CONFIG);
}

#[test]
fn range_and_usage_errors_exit_2() {
    assert_eq!(uclab(&["simulate", "--delta0", "1.5"]).status.code(), Some(2));
    assert_eq!(uclab(&["simulate", "--delta0", "0.25", "--bogus"]).status.code(), Some(2));
    assert_eq!(uclab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(uclab(&["selftest", "--criteria", "12"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, HALFPLANE_K2_CONFIG.replace("delta0 = 0.25", "delta0 = 2.0")).unwrap();
    let out = uclab(&["pipeline", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta0"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(format!("{name}.csv"));
        let rep = dir.path().join(format!("{name}.json"));
        let out = uclab(&[
            "simulate", "--delta0", "0.25", "--K", "4", "--depth", "10", "--trials", "1000",
            "--seed", "7", "--out", csv.to_str().unwrap(), "--report", rep.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(&csv).unwrap(), std::fs::read(&rep).unwrap())
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let csv = String::from_utf8(a.0).unwrap();
    assert!(csv.starts_with("depth,survivors,exact_tail,stirling_bound\n"));
    assert_eq!(csv.lines().count(), 11);
    let rep: serde_json::Value = serde_json::from_slice(&a.1).unwrap();
    assert_eq!(rep["alpha"], 0.1);
    assert!(rep["config_hash"].as_str().unwrap().len() == 64);
    assert!(rep["version"].is_string());
}

#[test]
fn selftest_subset_passes() {
    let out = uclab(&["selftest", "--criteria", "6,7,9"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.contains(" PASS ")));
}

#[test]
fn stagewise_commands_agree_with_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = config_path();
    let cfg = cfg.to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = uclab(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["--deterministic", "pipeline", "--config", cfg, "--out", &p("report.json")]);
    ok(&["solve", "--config", cfg, "--out", &p("sol.bin")]);
    ok(&["whitney", "--config", cfg, "--out", &p("tree.tsv")]);
    ok(&["nodal", "--config", cfg, "--solution", &p("sol.bin"), "--out", &p("nodal.json")]);
    ok(&[
        "dimension", "--tree", &p("tree.tsv"), "--nodal", &p("nodal.json"), "--out", &p("dim.json"),
    ]);
    let report = json(&dir.path().join("report.json"));
    assert!(report["dimension"]["slope"].as_f64().unwrap() <= 0.1);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(report["version"].is_string());
    let dim = json(&dir.path().join("dim.json"));
    assert_eq!(dim["dimension"], report["dimension"]);

    // a second run with a different thread count reproduces the report
    let out = Command::new(env!("CARGO_BIN_EXE_uclab"))
        .args(["pipeline", "--config", cfg, "--out", &p("again.json")])
        .env("UCLAB_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("report.json")).unwrap(),
        std::fs::read(dir.path().join("again.json")).unwrap()
    );
}
