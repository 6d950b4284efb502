//! End-to-end checks of the `fedxgb` binary: artifact layout, stdout
//! contract, and exit codes for the documented failure classes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedxgb"))
}

fn temp_out(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fedxgb-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn train_writes_artifacts() {
    let out = temp_out("train");
    let res = bin()
        .args([
            "train",
            "--dataset",
            "blobs",
            "--dataset-size",
            "120",
            "--users",
            "4",
            "--edges",
            "2",
            "--rounds",
            "2",
            "--seed",
            "9",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert!(
        res.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );

    for name in ["config.toml", "metrics.csv", "summary.json", "model.json"] {
        assert!(out.join(name).is_file(), "missing artifact {name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 2);
    assert_eq!(summary["users"], 4);
    assert!(summary["transcript"].as_str().unwrap().len() == 64);

    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["version"], 1);

    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn compare_reports_both_accuracies() {
    let out = temp_out("compare");
    let res = bin()
        .args([
            "compare",
            "--dataset",
            "blobs",
            "--dataset-size",
            "150",
            "--users",
            "4",
            "--edges",
            "2",
            "--rounds",
            "2",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert!(
        res.status.success(),
        "compare failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("federated"), "stdout: {stdout}");
    assert!(out.join("compare.csv").is_file());
    assert!(out.join("compare.json").is_file());
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn invalid_configuration_exits_two() {
    let res = bin()
        .args(["train", "--dataset", "blobs", "--users", "0"])
        .output()
        .expect("binary runs");
    assert_eq!(res.status.code(), Some(2), "usage errors are exit code 2");
}

#[test]
fn fractional_sweep_counts_exit_two() {
    let res = bin()
        .args([
            "sweep",
            "--dataset",
            "blobs",
            "--axis",
            "users",
            "--values",
            "4.5",
        ])
        .output()
        .expect("binary runs");
    assert_eq!(res.status.code(), Some(2), "user counts must be integers");
}
