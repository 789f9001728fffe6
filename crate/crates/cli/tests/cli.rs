//! End-to-end runs of the binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const OU: &str = "\
m = 0
nu = 1.4142135623730951
beta = 0
sigma.kind = power_abs
sigma.c = 1
sigma.q = 0.5
run.mc.paths = 500
";

fn svasym(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_svasym"));
    cmd.current_dir(dir).args(args);
    if let Some(t) = threads {
        cmd.env("SVASYM_THREADS", t);
    }
    cmd.output().unwrap()
}

fn setup(cfg: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("model.cfg"), cfg).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sigma_bar_prints_and_writes_json() {
    let dir = setup(OU);
    let o = svasym(dir.path(), &["sigma-bar", "--config", "model.cfg", "--out", "res"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("sigma_bar_sq = 7.97884560802"));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("res/sigma_bar.json")).unwrap()).unwrap();
    let s = v["sigma_bar_sq"].as_f64().unwrap();
    assert!((s - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-10);
}

#[test]
fn smile_csv_has_header_and_regime_column() {
    let dir = setup(OU);
    let o = svasym(dir.path(), &["smile", "--config", "model.cfg", "--regime", "2", "--t", "1.0"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("smile.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["logK", "implied_var", "regime"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 61);
    assert!(rows.iter().all(|r| &r[2] == "2"));
}

#[test]
fn every_analytic_command_succeeds() {
    let dir = setup(OU);
    for (cmd, file) in [
        ("validate", "validation.json"),
        ("invariant", "invariant.csv"),
        ("poisson", "poisson.csv"),
        ("hamiltonian", "hamiltonian.csv"),
        ("rate", "rate.csv"),
        ("price", "price.csv"),
    ] {
        let o = svasym(dir.path(), &[cmd, "--config", "model.cfg"], None);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert!(dir.path().join(file).exists(), "{cmd} did not write {file}");
    }
    let mut r = csv::Reader::from_path(dir.path().join("rate.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["x", "rate", "flag"]);
}

#[test]
fn unknown_flag_is_a_usage_error_naming_the_flag() {
    let dir = setup(OU);
    let o = svasym(dir.path(), &["smile", "--config", "model.cfg", "--strike"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--strike"));
    let o = svasym(dir.path(), &["rate", "--config", "model.cfg", "--regime", "3"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--regime"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = setup(&OU.replace("sigma.kind", "sigm.kind"));
    let o = svasym(dir.path(), &["sigma-bar", "--config", "model.cfg"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigm.kind"), "{}", stderr(&o));
}

#[test]
fn inadmissible_models_exit_with_one() {
    let dir = setup("m = 1\nnu = 1\nbeta = 0.5\nsigma.kind = constant\nsigma.s0 = 0.2\n");
    let o = svasym(dir.path(), &["validate", "--config", "model.cfg"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clause (2)"), "{}", stderr(&o));

    let dir = setup("m = 0.5\nnu = 1.2\nbeta = 0.5\ny0 = 1\nsigma.kind = constant\nsigma.s0 = 0.2\n");
    let o = svasym(dir.path(), &["validate", "--config", "model.cfg"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL clause (2)"));
    let o = svasym(dir.path(), &["sigma-bar", "--config", "model.cfg"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_artifacts_do_not_depend_on_thread_count() {
    let dir = setup(&format!("{OU}run.mc.seed = 7\nrho = -0.3\n"));
    let a = svasym(dir.path(), &["simulate", "--config", "model.cfg", "--out", "one"], Some("1"));
    let b = svasym(dir.path(), &["simulate", "--config", "model.cfg", "--out", "four"], Some("4"));
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    for f in ["simulate_summary.csv", "paths.bin"] {
        let x = fs::read(dir.path().join("one").join(f)).unwrap();
        let y = fs::read(dir.path().join("four").join(f)).unwrap();
        assert!(x == y, "{f} differs between thread counts");
    }
    let summary = fs::read_to_string(dir.path().join("one/simulate_summary.csv")).unwrap();
    assert!(summary.contains("seed,7"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = setup(OU);
    let o = svasym(dir.path(), &["sigma-bar", "--config", "model.cfg"], Some("many"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SVASYM_THREADS"));
}
