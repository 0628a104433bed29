use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "d": 4, "n_bidders": 2, "horizon": 2, "n_states": 2, "n_items": 2,
  "episodes": 30, "mc_oracle": 20000, "mc_learning": 512, "out_dir": "OUT"
}"#;

fn club(args: &[&str], out_override: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_club"));
    cmd.args(args).env_remove("CLUB_OUT_DIR");
    if let Some(dir) = out_override {
        cmd.env("CLUB_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text.replace("OUT", &dir.join("out").to_string_lossy())).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_ledger_summary_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = club(&["run", "--config", &config, "--seed", "3"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run_seed3.csv", "run_seed3.json", "run_seed3.svg"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("out/run_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn out_dir_env_var_wins() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let elsewhere = dir.path().join("elsewhere");
    let out = club(&["run", "--config", &config], Some(&elsewhere));
    assert_eq!(out.status.code(), Some(0));
    assert!(elsewhere.join("run_seed0.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn run_without_seed_uses_configured_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL.replace("\"episodes\"", "\"seeds\": [4, 9], \"episodes\""));
    assert_eq!(club(&["run", "--config", &config], None).status.code(), Some(0));
    assert!(dir.path().join("out/run_seed4.csv").exists());
    assert!(dir.path().join("out/run_seed9.csv").exists());
}

#[test]
fn sweep_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = club(&["sweep", "--config", &config, "--k", "10,20,40", "--seeds", "2"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep_dir = dir.path().join("out");
    assert!(sweep_dir.join("sweep.json").exists());
    assert_eq!(fs::read_dir(sweep_dir.join("runs")).unwrap().count(), 6);
    let svg = dir.path().join("again.svg");
    let out = club(&["plot", "--in", &sweep_dir.to_string_lossy(), "--out", &svg.to_string_lossy()], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(svg).unwrap().contains("</svg>"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_key = write_config(dir.path(), &SMALL.replace("\"episodes\"", "\"colour\": 1, \"episodes\""));
    assert_eq!(club(&["run", "--config", &unknown_key], None).status.code(), Some(2));
    let bad_value = write_config(dir.path(), &SMALL.replace("\"episodes\": 30", "\"episodes\": 0"));
    assert_eq!(club(&["run", "--config", &bad_value], None).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(club(&["run", "--config", &missing.to_string_lossy()], None).status.code(), Some(2));
    assert_eq!(club(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(club(&["sweep", "--config", &bad_value], None).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = club(&["plot", "--in", &empty.to_string_lossy(), "--out", &dir.path().join("x.svg").to_string_lossy()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
