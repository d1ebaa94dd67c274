use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn entangle(args: &[&str], env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entangle"));
    cmd.args(args).env_remove("ENTANGLE_OUTPUT_DIR");
    if let Some(d) = env_dir {
        cmd.env("ENTANGLE_OUTPUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn describe(args: &[&str]) -> Value {
    let mut all = vec!["describe"];
    all.extend_from_slice(args);
    let o = entangle(&all, None);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn empty_config_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "{}").unwrap();
    assert_eq!(describe(&["--config", path.to_str().unwrap()]), describe(&[]));
    assert_eq!(describe(&[])["seed"], 0);
}

#[test]
fn negative_seed_is_rejected_by_name() {
    let o = entangle(&["params-report", "--seed", "-1"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let o = entangle(&["describe", "--sede", "3"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));
}

#[test]
fn dumped_config_loads_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let first = describe(&["--steps", "500", "--cfn.noise_sigma", "0.02", "--vae.kappa", "0.5"]);
    let path = dir.path().join("dump.json");
    std::fs::write(&path, serde_json::to_string(&first).unwrap()).unwrap();
    assert_eq!(describe(&["--config", path.to_str().unwrap()]), first);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 4, "train": {"batch_size": 7}}"#).unwrap();
    let v = describe(&["--config", path.to_str().unwrap(), "--seed=9"]);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["train"]["batch_size"], 7);
}

#[test]
fn params_report_prints_the_baseline_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = entangle(&["params-report", "--output_dir", dir.path().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ffn baseline: 13013"), "{}", stdout(&o));
    assert!(dir.path().join("params-report-0.params.json").exists());
}

#[test]
fn grad_check_passes_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = entangle(&["grad-check"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["experiment"], "grad-check");
    assert!(manifest["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert!(!dir.path().join("FAILED").exists());
}

#[test]
fn identical_runs_write_identical_logs() {
    let args = |d: &Path| {
        vec![
            "train-cfn".to_string(),
            "--steps".into(),
            "300".into(),
            "--train.eval_every".into(),
            "100".into(),
            "--train.val_per_task".into(),
            "4".into(),
            "--output_dir".into(),
            d.to_str().unwrap().into(),
        ]
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let argv = args(d);
        let o = entangle(&argv.iter().map(String::as_str).collect::<Vec<_>>(), None);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["train-cfn-0.csv", "train-cfn-0.json", "train-cfn-0.cfn.checkpoint.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn failure_leaves_a_marker_with_the_reason() {
    let dir = tempfile::tempdir().unwrap();
    let o = entangle(
        &[
            "forgetting",
            "--steps",
            "200",
            "--forgetting.pretrain_max_steps",
            "20",
            "--forgetting.pretrain_eval_every",
            "10",
            "--output_dir",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert!(!o.status.success());
    let reason = std::fs::read_to_string(dir.path().join("FAILED")).unwrap();
    assert!(!reason.trim().is_empty());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn explicit_output_dir_beats_the_environment() {
    let (env_dir, flag_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = entangle(
        &["params-report", "--output_dir", flag_dir.path().to_str().unwrap()],
        Some(env_dir.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(flag_dir.path().join("manifest.json").exists());
    assert!(!env_dir.path().join("manifest.json").exists());
}

#[test]
fn unknown_experiment_is_an_error() {
    let o = entangle(&["train-everything"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train-everything"), "{}", stderr(&o));
}
