//! Runs the `autoens` binary end to end on a small config.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn autoens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoens"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    let text = format!(
        "seed = 5\ndata.n = 300\nsse.cycle_len = 4\nind.epochs = 20\nind.milestones = 10,15\nce.epochs = 20\nce.top_k = 4\noutput_dir = {}\n",
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_seed_is_a_config_error() {
    let out = autoens(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_method_and_bad_config_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(
        autoens(&["train", "--config", &cfg, "--method", "bagging"])
            .status
            .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed = 1\nsched.alpha1 = 0.001\n").unwrap();
    assert_eq!(
        autoens(&["train", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unreadable_inputs_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    assert_eq!(
        autoens(&["train", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );
    let cfg = small_config(dir.path());
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fs::write(empty.join("ckpt-0000.aeck"), b"AECK").unwrap();
    assert_eq!(
        autoens(&["ensemble", "--config", &cfg, empty.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn train_then_ensemble_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = autoens(&["train", "--config", &cfg, "--method", "ae"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = dir.path().join("out/ae");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert!(summary["T"].as_u64().unwrap() >= 1);
    assert!(run.join("log.jsonl").is_file());

    let again = dir.path().join("again");
    let out = autoens(&[
        "ensemble",
        "--config",
        &cfg,
        "--out",
        again.to_str().unwrap(),
        run.join("checkpoints").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rebuilt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(again.join("summary.json")).unwrap()).unwrap();
    assert_eq!(rebuilt, summary);

    let report = dir.path().join("report");
    let out = autoens(&[
        "report",
        "--out",
        report.to_str().unwrap(),
        "--format",
        "jsonl",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(report.join("lr_vs_step_ae.jsonl").is_file());
    assert!(report.join("comparison.jsonl").is_file());
}

#[test]
fn compare_prints_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = autoens(&["compare", "--config", &cfg, "--method", "ae,ind,ce"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("| ")).count(), 4);
    let md = fs::read_to_string(dir.path().join("out/comparison.md")).unwrap();
    assert_eq!(md, stdout);
    assert!(dir.path().join("out/correlation_ae.csv").is_file());
}

#[test]
fn lr_range_writes_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = autoens(&["lr-range", "--config", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/bounds.json")).unwrap())
            .unwrap();
    assert!(bounds["alpha2"]["lo"].as_f64().unwrap() < bounds["alpha2"]["hi"].as_f64().unwrap());
    assert!(dir.path().join("out/accuracy_vs_lr.csv").is_file());
}
