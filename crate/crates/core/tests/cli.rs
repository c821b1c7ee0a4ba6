use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "seeds = 1\n\
[synthetic]\ntrain = 120\nvalidation = 40\ntest = 40\n\
[train]\nepochs = 2\n";

fn rma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rma")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn typo_in_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[train]\nepoch = 3\n");
    let out = rma(&["train", "--config", &config]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn generated_data_can_be_trained_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = write_config(dir.path(), SMALL);
    ok(rma(&["gen-data", "--config", &config, "--out", data.to_str().unwrap()]));
    for f in ["vocab.txt", "train.tsv", "valid.tsv", "test.tsv", "task.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let config = write_config(dir.path(), &format!("data_dir = {:?}\n{SMALL}", data.to_str().unwrap()));
    let run = dir.path().join("run");
    let text = ok(rma(&["train", "--config", &config, "--rule", "svgd", "--out", run.to_str().unwrap()]));
    let result: serde_json::Value = serde_json::from_str(&text).unwrap();
    let acc = result["test_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for f in ["history.csv", "checkpoint.json", "attention.csv", "result.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
}

#[test]
fn calibrating_a_checkpoint_matches_the_training_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let run = dir.path().join("run");
    let text = ok(rma(&["train", "--config", &config, "--out", run.to_str().unwrap()]));
    let result: serde_json::Value = serde_json::from_str(&text).unwrap();
    let checkpoint = run.join("checkpoint.json");
    let cal = dir.path().join("cal");
    let out = ok(rma(&[
        "calibrate",
        "--config",
        &config,
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--out",
        cal.to_str().unwrap(),
    ]));
    let ece_line = out.lines().find(|l| l.starts_with("ece ")).unwrap();
    assert_eq!(ece_line, format!("ece {:.6}", result["ece"].as_f64().unwrap()));
    assert!(cal.join("calibration.csv").exists());
    assert!(cal.join("entropy_cdf.csv").exists());
}

#[test]
fn report_writes_only_inside_its_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config_dir = tempfile::tempdir().unwrap();
    let config = write_config(config_dir.path(), SMALL);
    let out = dir.path().join("out");
    let text = ok(rma(&["report", "--config", &config, "--rule", "svgd", "--out", out.to_str().unwrap()]));
    assert!(text.contains("rma-svgd"));
    let top: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec![std::ffi::OsString::from("out")]);
    for f in ["summary.json", "comparison.csv", "report.txt", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn toy_sampler_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(rma(&["sample-toy", "--target", "mixture-1d", "--out", dir.path().to_str().unwrap()]));
    let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(summary["target"], "mixture-1d");
    assert!(summary["left"].as_u64().unwrap() >= 10);
    assert!(summary["right"].as_u64().unwrap() >= 10);
}
