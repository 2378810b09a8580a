use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fuselang_harness::config::RunConfig;

fn fuselang(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuselang"))
        .args(args)
        .env("FUSELANG_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let mut cfg = RunConfig::segmentation();
    cfg.data.cosal.train_count = 4;
    cfg.data.cosal.test_count = 3;
    cfg.training.batch_size = 4;
    cfg.training.epochs = 1;
    let path = dir.join("run.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn end_to_end_commands_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();

    ok(&fuselang(&["cosal-gen", "--config", &cfg, "--out", &p("data")]));
    assert!(tmp.path().join("data/train").is_dir() && tmp.path().join("data/test").is_dir());

    let trained = ok(&fuselang(&["train", "--config", &cfg, "--data", &p("data"), "--out", &p("run")]));
    let report: serde_json::Value = serde_json::from_str(&trained).unwrap();
    assert!(report["average_iou"].as_f64().unwrap().is_finite());
    assert!(tmp.path().join("run/checkpoint/config.toml").is_file());

    let ck = p("run/checkpoint");
    let a = ok(&fuselang(&["eval", "--checkpoint", &ck, "--out", &p("eval")]));
    let b = ok(&fuselang(&["eval", "--checkpoint", &ck]));
    assert_eq!(a, b);
    assert_eq!(a.trim(), trained.trim());
    assert!(tmp.path().join("eval/metrics.json").is_file());
    ok(&fuselang(&["eval", "--checkpoint", &ck, "--expectation", "--train-split"]));

    let inspected = ok(&fuselang(&["inspect-attention", "--checkpoint", &ck, "--count", "3", "--out", &p("att")]));
    let v: serde_json::Value = serde_json::from_str(&inspected).unwrap();
    assert_eq!(v["scenes"], 3);
    assert!(tmp.path().join("att/attention.png").is_file());
    assert!(!fuselang(&["inspect-attention", "--checkpoint", &ck, "--example", "99"]).status.success());

    let table = ok(&fuselang(&["compare-estimators", "--samples", "300", "--out", &p("est")]));
    assert!(table.contains("reinforce") && table.contains("gumbel-softmax"));
    assert!(tmp.path().join("est/estimators.json").is_file());
}

#[test]
fn validation_failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "schema = \"fuselang-config-v0\"\n").unwrap();
    let bad = bad.to_string_lossy().into_owned();
    assert!(!fuselang(&["cosal-gen", "--config", &bad, "--out", "x"]).status.success());

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "learning_rat = 3\n").unwrap();
    assert!(!fuselang(&["train", "--config", &unknown.to_string_lossy()]).status.success());

    assert!(!fuselang(&["cosal-gen"]).status.success());
    assert!(!fuselang(&["eval", "--checkpoint", &tmp.path().join("missing").to_string_lossy()]).status.success());
    assert!(!fuselang(&["frobnicate"]).status.success());
}

#[test]
fn config_files_round_trip() {
    for cfg in [RunConfig::segmentation(), RunConfig::colorization()] {
        let text = cfg.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
    let partial = "schema = \"fuselang-config-v1\"\nseed = 7\n[training]\nepochs = 3\n";
    let cfg = RunConfig::parse(partial).unwrap();
    assert_eq!((cfg.seed, cfg.training.epochs, cfg.training.batch_size), (7, 3, 8));
}
