//! End-to-end runs of the `hopfir` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hopfir::export::read_attention_csv;
use serde_json::Value;

const TINY: &[&str] = &[
    "--set",
    "channels=16",
    "--set",
    "blocks=1",
    "--set",
    "heads=2",
];

fn hopfir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopfir")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Trains a tiny model for two epochs and returns the run directory.
fn tiny_run(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("run");
    let mut args = vec![
        "train",
        "--out",
        path(&out),
        "--synth",
        "48",
        "--synth-eval",
        "16",
        "--set",
        "epochs=2",
        "--set",
        "batch_size=16",
    ];
    args.extend_from_slice(TINY);
    let o = hopfir(&args);
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = hopfir(&["gradcheck", "--config", "/nonexistent/model.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/model.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let o = hopfir(&["gradcheck", "--set", "chanels=8"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("chanels"));
}

#[test]
fn train_writes_manifest_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_run(dir.path());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["model"]["channels"], "16");
    assert_eq!(manifest["precision"], "f32");
    assert!(manifest["git"].is_string());
    for f in ["log.jsonl", "last.ckpt", "best.ckpt", "config.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    // the written config reproduces the resolved settings
    let again = dir.path().join("again");
    let o = hopfir(&[
        "train",
        "--config",
        path(&out.join("config.txt")),
        "--out",
        path(&again),
        "--synth",
        "48",
        "--synth-eval",
        "16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("last.ckpt")).unwrap(), fs::read(again.join("last.ckpt")).unwrap());
}

#[test]
fn set_overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.cfg");
    fs::write(&cfg, "channels = 32\nblocks = 1\nheads = 2\nepochs = 1\nbatch_size = 16\n").unwrap();
    let out = dir.path().join("run");
    let o = hopfir(&[
        "train",
        "--config",
        path(&cfg),
        "--set",
        "channels=64",
        "--seed",
        "9",
        "--out",
        path(&out),
        "--synth",
        "16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["model"]["channels"], "64");
    assert_eq!(manifest["model"]["seed"], "9");
    assert_eq!(manifest["train"]["train_seed"], "9");
}

#[test]
fn train_without_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hopfir(&["train", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = hopfir(&["train", "--out", path(dir.path()), "--data", "/nonexistent/train.hfp"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_infer_and_attention() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    let ckpt = run.join("best.ckpt");
    let data = dir.path().join("test.csv");
    let o = hopfir(&["synth-data", "--count", "5", "--seed", "3", "--out", path(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let p1 = dir.path().join("p1");
    let o = hopfir(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--protocol", "p1", "--out", path(&p1)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&p1.join("report.json"));
    let mut keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    // synthetic samples carry an action label, so the per-action MPJPE is present
    assert_eq!(keys, ["mpjpe_mm", "per_action", "per_joint_mm"]);

    let all = dir.path().join("all");
    let o = hopfir(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&all)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("P-MPJPE"));
    let report = read_json(&all.join("report.json"));
    assert!(report["p_mpjpe_mm"].as_f64().unwrap() <= report["mpjpe_mm"].as_f64().unwrap() + 1e-9);

    // an expected config that disagrees with the checkpoint names the keys
    let o = hopfir(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&data),
        "--out",
        path(&all),
        "--set",
        "channels=32",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("channels"));

    let inf = dir.path().join("infer");
    let o = hopfir(&["infer", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&inf)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(inf.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 1 + 16 * 3);

    let att = dir.path().join("att");
    let o = hopfir(&["inspect-attention", "--checkpoint", path(&ckpt), "--data", path(&data), "--sample", "2", "--out", path(&att), "--cell", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(att.join("attention.csv")).unwrap();
    let maps = read_attention_csv(&bytes).unwrap();
    // one block with hops 1..=3 after each of the two attention units
    assert!(!maps.is_empty());
    for m in &maps {
        assert_eq!(m.size, 16);
        for row in m.values.chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-4);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        let ppm = fs::read(att.join(format!("{}.ppm", m.label))).unwrap();
        assert!(ppm.starts_with(b"P6\n64 64\n255\n"));
    }
    assert_eq!(hopfir::export::write_attention_csv(&maps).unwrap(), bytes);

    let o = hopfir(&["inspect-attention", "--checkpoint", path(&ckpt), "--data", path(&data), "--sample", "5", "--out", path(&att)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out of range"));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let mut args = vec!["gradcheck", "--coords", "40", "--set", "channels=8"];
    args.extend_from_slice(&TINY[2..]);
    let o = hopfir(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    for layer in ["gcn", "hopgcn", "mhsa", "ijr", "loss"] {
        assert!(table.lines().any(|l| l.starts_with(layer)), "no row for {layer}");
    }

    args.push("--corrupt-backward");
    let o = hopfir(&args);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("coordinate"), "{}", stderr(&o));
}
