use std::fs;
use std::path::Path;
use std::process::Command;

use cooprec::codec::{SparseFeatureMessage, HEADER_BYTES};
use cooprec::harness::report::METRICS_HEADER;

const SMALL: [&str; 10] = ["--set", "train_worlds=4", "--set", "eval_worlds=2", "--set", "train_seeds=1", "--epochs", "1", "--set", "eval_seeds=9"];

fn cooprec(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cooprec")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn train_then_eval_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--regime", "core", "--out", "run"];
    args.extend(SMALL);
    let out = cooprec(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,core,1,9,"));
    assert!(run.join("timings.csv").exists());
    assert!(fs::read_to_string(run.join("config.txt")).unwrap().contains("regime=core"));

    let mut args = vec!["eval", "--checkpoint", "run/core_seed1.ckpt", "--regime", "core", "--out", "ev", "--images", "1", "--wire-dump", "wire"];
    args.extend(SMALL);
    let out = cooprec(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ev = dir.path().join("ev");
    let preds = fs::read_to_string(ev.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 2 * 3);
    let seg = fs::read(ev.join("e9_w0_a0_seg.pgm")).unwrap();
    assert!(seg.starts_with(b"P5\n64 64\n255\n"));

    let wire: Vec<_> = fs::read_dir(dir.path().join("wire")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(wire.len(), 2 * 3 * 2);
    for p in wire {
        let bytes = fs::read(&p).unwrap();
        let msg = SparseFeatureMessage::from_bytes(&bytes).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + msg.payload_bytes());
    }
}

#[test]
fn dump_scene_writes_graymaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = cooprec(&["dump-scene", "--world-seed", "4", "--out", "s"], dir.path());
    assert!(out.status.success());
    for a in 0..3 {
        for name in ["raw_c0", "raw_c1", "sup_c0", "sup_c1", "labels"] {
            assert!(dir.path().join(format!("s/agent{a}_{name}.pgm")).exists());
        }
    }
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cooprec(&["train", "--K", "0"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("K must be"));
    let out = cooprec(&["sweep", "--axis", "nope", "--values", "1"], dir.path());
    assert!(!out.status.success());
    fs::write(dir.path().join("bad.cfg"), "K=50\nbogus=1\n").unwrap();
    let out = cooprec(&["dump-scene", "--config", "bad.cfg"], dir.path());
    assert!(!out.status.success());
}
