//! End-to-end checks of the binary: recipe -> fit -> evaluate -> diagnose,
//! exit codes, and flag overrides.

use std::fs;
use std::path::Path;
use std::process::Command;

fn margp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_margp"))
}

fn shrink_config(dir: &Path) {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    cfg["mcmc"]["iterations"] = 30.into();
    cfg["mcmc"]["burn_in"] = 10.into();
    cfg["mcmc"]["probe_grid"] = 2.into();
    cfg["eval"]["grid_points"] = serde_json::json!([16, 16]);
    cfg["eval"]["quad_points"] = 32.into();
    cfg["eval"]["max_eval_samples"] = 5.into();
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn recipe_fit_evaluate_diagnose_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = margp()
        .args(["recipe", "synthetic1", "--n", "10", "--seed", "3", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    shrink_config(tmp.path());
    let cfg = tmp.path().join("config.json");

    for cmd in ["fit", "evaluate", "diagnose"] {
        let out = margp().arg(cmd).arg("--config").arg(&cfg).output().unwrap();
        assert!(
            out.status.success(),
            "{} failed: {}",
            cmd,
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let run_dir = tmp.path().join("out");
    for artifact in ["trace.csv", "meta.json", "surface.csv", "heldout.json", "ess.json"] {
        assert!(run_dir.join(artifact).exists(), "missing {}", artifact);
    }
}

#[test]
fn missing_config_exits_with_config_code() {
    let out = margp()
        .args(["fit", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_data_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    margp()
        .args(["recipe", "synthetic1", "--n", "10", "--seed", "3", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    shrink_config(tmp.path());
    // Corrupt the training data.
    fs::write(tmp.path().join("train.csv"), "x1,x2\n1.0,oops\n").unwrap();
    let out = margp()
        .arg("fit")
        .arg("--config")
        .arg(tmp.path().join("config.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{:?}", out);
}

#[test]
fn unknown_recipe_is_a_config_error() {
    let out = margp().args(["recipe", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    margp()
        .args(["recipe", "synthetic1", "--n", "8", "--seed", "3", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    shrink_config(tmp.path());
    let cfg = tmp.path().join("config.json");
    let run = |seed: &str| -> Vec<u8> {
        let out = margp()
            .args(["fit", "--config"])
            .arg(&cfg)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success());
        fs::read(tmp.path().join("out").join("trace.csv")).unwrap()
    };
    let a = run("5");
    let b = run("5");
    let c = run("6");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
