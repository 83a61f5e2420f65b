use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TRAIN: &str = r#"
batch_size = 16
queue_size = 256
steps = 50

[encoder]
filters = 8
embed_dim = 16
"#;

const PROTOCOL: &str = r#"
seeds = [0]
max_train_samples = 800
max_eval_samples = 400

[probe]
lr = 0.01
max_epochs = 5
"#;

fn ncl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncl"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ncl(dir, args);
    assert!(
        out.status.success(),
        "ncl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("train.toml"), TRAIN).unwrap();
    fs::write(d.join("protocol.toml"), PROTOCOL).unwrap();

    ok(d, &["synth", "--patients", "100", "--out", "raw"]);
    ok(d, &["preprocess", "--input", "raw", "--out", "proc"]);
    assert!(d.join("proc/run.json").exists());

    let pretrain = |out: &str, alpha: &str, steps: &str| {
        ok(
            d,
            &[
                "pretrain", "--data", "proc", "--config", "train.toml", "--method", "ncl_w", "--alpha", alpha,
                "--steps", steps, "--out", out,
            ],
        )
    };
    pretrain("a0", "0", "200");
    pretrain("a1", "1", "30");

    // flags win over the config file and land in the manifest
    let manifest = json(&d.join("a0/run.json"));
    assert_eq!(manifest["config"]["steps"], 200);
    assert_eq!(manifest["config"]["alpha"], 0.0);
    assert_eq!(manifest["config"]["encoder"]["filters"], 8);
    let metrics = fs::read_to_string(d.join("a0/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 201);

    for run in ["a0", "a1"] {
        ok(d, &["evaluate", "--run", run, "--data", "proc", "--config", "protocol.toml"]);
    }
    let report = json(&d.join("a0/eval/report.json"));
    let entries = report["entries"].as_array().unwrap();
    assert!(entries.iter().any(|e| e["metric"] == "auroc"));
    for e in entries {
        let v = e["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    let summary = ok(d, &["report", "a0", "a1", "--out", "rep"]);
    assert!(summary.starts_with("method,alpha,w,task"));
    let svg = fs::read_to_string(d.join("rep/alpha_decompensation_auroc_linear_1.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 2);
}

#[test]
fn same_inputs_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("train.toml"), TRAIN).unwrap();
    ok(d, &["synth", "--patients", "16", "--seed", "3", "--out", "raw"]);
    ok(d, &["preprocess", "--input", "raw", "--out", "proc"]);
    for out in ["r1", "r2"] {
        ok(d, &["pretrain", "--data", "proc", "--config", "train.toml", "--steps", "20", "--out", out]);
    }
    let (m1, m2) = (json(&d.join("r1/run.json")), json(&d.join("r2/run.json")));
    assert_eq!(m1["run_hash"], m2["run_hash"]);
    assert_eq!(
        fs::read(d.join("r1/checkpoint.json")).unwrap(),
        fs::read(d.join("r2/checkpoint.json")).unwrap()
    );
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let bad_alpha = ncl(d, &["pretrain", "--data", "nowhere", "--alpha", "2", "--out", "x"]);
    assert_eq!(bad_alpha.status.code(), Some(2));
    let line: serde_json::Value = serde_json::from_slice(&bad_alpha.stderr).unwrap();
    assert_eq!(line["exit"], 2);

    let missing = ncl(d, &["pretrain", "--data", "nowhere", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(3));

    fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    let unknown = ncl(d, &["synth", "--config", "bad.toml", "--out", "raw"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn data_root_resolves_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    fs::create_dir(&root).unwrap();
    ok(&root, &["synth", "--patients", "12", "--out", "raw"]);
    let out = Command::new(env!("CARGO_BIN_EXE_ncl"))
        .current_dir(tmp.path())
        .env("NCL_DATA_ROOT", &root)
        .args(["preprocess", "--input", "raw", "--out", "proc"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("proc/manifest.json").exists());
}
