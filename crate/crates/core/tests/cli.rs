use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn clse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clse")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_RUN: &str = r#"{
    "scenario": {"seed": 3},
    "run": {"n_trials": 24, "n_iters": 500, "warmup": 250, "steady_window": 250, "master_seed": 2},
    "sweep": {"axis": "mu", "grid": [1.0, 1000.0]}
}"#;

#[test]
fn predict_reference_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"scenario": {"L": 7, "K": 3, "lambda": 0.995, "mu": 1000.0, "eta": 0.1}}"#);
    let out = tmp.path().join("out");
    let o = clse(&["predict", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("prediction.json")).unwrap()).unwrap();
    assert_eq!(v["stable_rcls"], true);
    assert!(out.join("prediction.csv").exists());
}

#[test]
fn malformed_json_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "{\"scenario\": {\"seed\": }");
    let out = tmp.path().join("out");
    let o = clse(&["predict", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"run": {"n_trails": 10}}"#);
    let out = tmp.path().join("out");
    let o = clse(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_trails"));
    assert!(!out.exists());
}

#[test]
fn unwritable_output_directory_fails() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("out");
    let o = clse(&["predict", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn serial_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_RUN);
    for cmd in ["predict", "simulate", "sweep"] {
        let a = tmp.path().join(format!("{cmd}_a"));
        let b = tmp.path().join(format!("{cmd}_b"));
        for dir in [&a, &b] {
            let o = clse(&[cmd, "--config", &cfg, "--out", dir.to_str().unwrap(), "--serial"]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let fa = files(&a);
        assert!(!fa.is_empty());
        assert_eq!(fa, files(&b), "{cmd}");
    }
    let curves = std::fs::read_to_string(tmp.path().join("simulate_a/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 501);
    let sweep = std::fs::read_to_string(tmp.path().join("sweep_a/sweep_mu.csv")).unwrap();
    assert!(sweep.starts_with("axis_value,steady_msd_db,steady_msm_db,theory_msd_db,theory_msm_db,stderr_db,n_trials,seed\n"));
}

#[test]
fn parallel_matches_serial() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_RUN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(clse(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--serial"]).status.success());
    assert!(clse(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(files(&a), files(&b));
}

#[test]
fn seed_flag_changes_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_RUN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(clse(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "10"]).status.success());
    assert!(clse(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "11"]).status.success());
    assert_ne!(files(&a), files(&b));
}

#[test]
fn verify_subset_and_broken_tolerance() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("v");
    let o = clse(&["verify", "--only", "9,11", "--out", out.to_str().unwrap(), "--serial"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("verify.json")).unwrap()).unwrap();
    let ids: Vec<u64> = v["criteria"].as_array().unwrap().iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![9, 11]);
    assert_eq!(v["pass"], true);

    let o = clse(&["verify", "--only", "9", "--tolerance-scale", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    let o = clse(&["verify", "--only", "12", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn hidden_flag_is_not_advertised() {
    let o = clse(&["verify", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("--only"));
    assert!(!text.contains("tolerance"));
}
