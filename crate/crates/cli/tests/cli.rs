use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gradsurge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradsurge"))
        .args(args)
        .env_remove("GRADSURGE_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"data":{"n_graphs":60},"aux":["am","mp"],
    "encoder":{"layers":1,"hidden":8},"optim":{"lr":0.1,"epochs":2,"batch_size":16}}"#;

#[test]
fn print_config_applies_overrides() {
    let o = gradsurge(&["train", "--print-config", "--method", "BLORC", "--seed", "17", "--aux", "ep,flip"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["method"], "BLORC");
    assert_eq!(v["seed"], 17);
    assert_eq!(v["aux"], serde_json::json!(["ep", "flip"]));
}

#[test]
fn seed_falls_back_to_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_gradsurge"))
        .args(["train", "--print-config"])
        .env("GRADSURGE_SEED", "42")
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 42);
}

#[test]
fn bad_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), r#"{"optim":{"lr":-1}}"#);
    assert_eq!(gradsurge(&["--config", &bad, "train"]).status.code(), Some(2));
    let unknown = write_config(dir.path(), r#"{"no_such_key":true}"#);
    assert_eq!(gradsurge(&["--config", &unknown, "train"]).status.code(), Some(2));
    assert_eq!(gradsurge(&["--config", "/nonexistent/cfg.json", "train"]).status.code(), Some(2));
    assert_eq!(gradsurge(&["train", "--method", "SGD"]).status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let o = gradsurge(&["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn verify_failure_exits_with_code_3() {
    // a step past the stability limit cannot pass the hypergradient check
    let o = gradsurge(&["verify", "--neumann-beta-factor", "2.5"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn gen_data_train_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().to_string_lossy().into_owned();

    let o = gradsurge(&["--config", &cfg, "--out", &out, "gen-data"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("graphs.jsonl")).unwrap().lines().count(), 60);

    let o = gradsurge(&["--config", &cfg, "--out", &out, "--method", "PCGrad", "train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs: Vec<_> = fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run_dir = runs[0].as_ref().unwrap().path();
    let o = gradsurge(&["report", &run_dir.to_string_lossy()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("method PCGrad"));
}

#[test]
fn sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().to_string_lossy().into_owned();
    let o = gradsurge(&["--config", &cfg, "--out", &out, "sweep", "--seeds", "2", "--methods", "FT,GradScale"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("method,n_seeds,mean_test_auc,std_test_auc"));
    let o = gradsurge(&["report", &out]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("GradScale"));
}

#[test]
fn config_reference_lists_defaults() {
    let o = gradsurge(&["config-reference"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("\"neumann_steps\": 3"));
}
