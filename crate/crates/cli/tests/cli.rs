use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drought(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drought"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const TINY: &str = r#"
output_dir = "out"
kinds = ["svm", "dense"]
trials = 1
seeds = [0]
splits = [3]
factors = [1, 2]
max_lag = 4

[data]
source = "synthetic"
n_lat = 6
n_lon = 6
n_months = 120

[train]
max_epochs = 2
patience = 1
epoch_samples = 256
"#;

#[test]
fn synth_then_train_ablate_report_from_container() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();

    let out = drought(dir.path(), &["--config", "tiny.toml", "synth", "--out", "grid.arid", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("grid.arid").exists());
    let sidecar = fs::read_to_string(dir.path().join("grid.json")).unwrap();
    assert!(sidecar.contains("\"seed\": 7"));

    let common = ["--config", "tiny.toml", "--grid", "grid.arid"];
    for cmd in ["train", "ablate", "report", "lagcorr"] {
        let args: Vec<&str> = common.iter().copied().chain([cmd]).collect();
        let out = drought(dir.path(), &args);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["summary.csv", "results.csv", "ablation.csv", "ablation_trend.csv", "lagcorr.csv", "manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let report = drought(dir.path(), &["--config", "tiny.toml", "report"]);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("== summary.csv") && text.contains("svm"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = drought(dir.path(), &["--config", "tiny.toml", "--kinds", "lstm,cnn", "--trials", "4", "config"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(r#"kinds = ["lstm", "cnn"]"#), "{text}");
    assert!(text.contains("trials = 4"));
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = drought(dir.path(), &["--seeds", "1,1", "config"]);
    assert_eq!(out.status.code(), Some(2));
    let out = drought(dir.path(), &["--output-dir", "nothing", "ablate", "--kinds", "svm"]);
    assert!(!out.status.success());
    let out = drought(dir.path(), &["--output-dir", "nothing", "report"]);
    assert!(!out.status.success());
}
