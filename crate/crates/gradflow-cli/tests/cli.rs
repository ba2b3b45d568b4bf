use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gradflow(args: &[&str], config: Option<&str>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gradflow"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(text) = config {
        let path = out.with_extension("json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().expect("binary runs")
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn identities_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("id");
    let o = gradflow(&["identities"], None, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["experiment"], "identities");
    assert_eq!(s["passed"], true);
    let ids: Vec<u64> = s["criteria"].as_array().unwrap().iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [1, 2]);
    for f in ["identities.csv", "identities.dat", "legendre.csv", "legendre.dat"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let dat = fs::read_to_string(out.join("legendre.dat")).unwrap();
    assert!(dat.starts_with("# xi cstar"));
}

#[test]
fn three_state_cosh_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ts");
    let cfg = r#"{ "case": "cosh", "eps_list": [0.3, 0.1, 0.03, 0.01] }"#;
    let o = gradflow(&["three-state", "--no-criteria"], Some(cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|&c| c == "sup_error").unwrap();
    let sup: Vec<f64> = lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect();
    assert_eq!(sup.len(), 4);
    assert!(sup.windows(2).all(|w| w[1] < w[0]), "{sup:?}");
    assert_eq!(summary(&out)["config"]["case"], "cosh");
}

#[test]
fn oracle_hundred_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("or");
    let o = gradflow(&["oracle", "--seed", "7", "--no-criteria"], Some(r#"{ "n": 100 }"#), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("oracle.csv")), 100);
    let s = summary(&out);
    assert_eq!(s["seed"], 7);
    assert_eq!(s["config"]["m"], 400);
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".dat"))
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n} differs");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for exp in ["markov", "reaction", "membrane"] {
        let a = dir.path().join(format!("{exp}-a"));
        let b = dir.path().join(format!("{exp}-b"));
        let oa = gradflow(&[exp, "--quick", "--no-criteria", "--jobs", "1"], None, &a);
        let ob = gradflow(&[exp, "--quick", "--no-criteria", "--jobs", "3"], None, &b);
        assert!(oa.status.success() && ob.status.success(), "{}{}", stderr(&oa), stderr(&ob));
        assert_same_outputs(&a, &b);
    }
}

#[test]
fn seed_changes_particle_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gradflow(&["markov", "--quick", "--no-criteria", "--seed", "1"], None, &a);
    gradflow(&["markov", "--quick", "--no-criteria", "--seed", "2"], None, &b);
    assert_ne!(fs::read(a.join("monte_carlo.csv")).unwrap(), fs::read(b.join("monte_carlo.csv")).unwrap());
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("three-state", r#"{ "eps_list": [0.3, "x"] }"#, "eps_list[1]"),
        ("three-state", r#"{ "eps_list": [0.1, 0.3] }"#, "strictly decreasing"),
        ("three-state", r#"{ "case": "cubic" }"#, "case"),
        ("oracle", r#"{ "n": 10, "samples": 3 }"#, "unknown field `samples`"),
        ("membrane", r#"{ "system": { "mesh": { "cells_side": -1 } } }"#, "system.mesh.cells_side"),
        ("membrane", r#"{ "system": { "dt": 0.0 } }"#, "system.dt"),
        ("reaction", r#"{ "sweep": { "setup": { "epsilon": "small" } } }"#, "sweep.setup.epsilon"),
        ("two-state", r#"{ "p0": 1.5 }"#, "p0"),
    ];
    for (k, (exp, cfg, needle)) in cases.iter().enumerate() {
        let out = dir.path().join(format!("bad{k}"));
        let o = gradflow(&[exp, "--quick", "--no-criteria"], Some(cfg), &out);
        assert_eq!(o.status.code(), Some(2), "{exp} {cfg}");
        let msg = stderr(&o);
        assert!(msg.contains(needle), "{exp} {cfg}: {msg}");
    }
}

#[test]
fn failing_check_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("strict");
    let o = gradflow(&["oracle", "--quick", "--no-criteria"], Some(r#"{ "g_tol": 1e-14 }"#), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("transmission closed form"), "{}", stderr(&o));
    assert_eq!(summary(&out)["passed"], false);
}

#[test]
fn quick_runs_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    for exp in ["identities", "two-state", "markov", "three-state", "membrane", "reaction", "oracle"] {
        let out = dir.path().join(exp);
        let o = gradflow(&[exp, "--quick"], None, &out);
        assert!(o.status.success(), "{exp}: {}", stderr(&o));
        let s = summary(&out);
        assert_eq!(s["quick"], true);
        assert!(!s["criteria"].as_array().unwrap().is_empty());
    }
}
