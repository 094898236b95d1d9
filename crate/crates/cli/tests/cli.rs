use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spdseq_core::config::RunConfig;

fn spdseq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdseq"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn spdseq")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spdseq(dir, args);
    assert!(
        out.status.success(),
        "spdseq {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "synth".to_string(),
            "--out".into(),
            out.into(),
            "--recordings".into(),
            "2".into(),
            "--epochs".into(),
            "8".into(),
        ]
    };
    for out in ["a", "b"] {
        let a = args(out);
        ok(tmp.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let a = tree(&tmp.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, tree(&tmp.path().join("b")));
}

#[test]
fn invalid_spec_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spdseq(tmp.path(), &["synth", "--classes", "1", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["init", "--out", "run.toml"]);
    let path = tmp.path().join("run.toml");
    let text = fs::read_to_string(&path).unwrap().replace("[train]\n", "[train]\nlearning_rat = 0.1\n");
    fs::write(&path, text).unwrap();
    let out = spdseq(tmp.path(), &["preprocess", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn missing_config_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spdseq(tmp.path(), &["train", "--config", "absent.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_tiny_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["gradcheck", "--tiny"]);
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.contains("24 of 24 checks passed"), "{stdout}");
}

#[test]
fn ablations_emit_loadable_configs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["init", "--out", "run.toml"]);
    ok(tmp.path(), &["ablations", "--config", "run.toml", "--out", "abl"]);
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("abl"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in &names {
        let cfg = RunConfig::load(&tmp.path().join("abl").join(n)).unwrap();
        assert!(cfg.paths.caches.ends_with(n.trim_end_matches(".toml")));
    }
}

#[test]
fn end_to_end_on_a_small_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--recordings", "4", "--epochs", "56", "--out", "data/recordings"]);
    ok(dir, &["init", "--out", "run.toml", "--recordings", "data/recordings"]);

    let mut cfg = RunConfig::load(&dir.join("run.toml")).unwrap();
    assert_eq!(cfg.folds.len(), 4);
    cfg.folds.truncate(2);
    cfg.train.max_passes = 2;
    fs::write(dir.join("run.toml"), cfg.to_toml_string()).unwrap();

    ok(dir, &["--jobs", "2", "preprocess", "--config", "run.toml"]);
    assert!(dir.join("data/caches/manifest.toml").is_file());
    assert!(dir.join("data/caches/synth-000.spdtok").is_file());

    let stdout = ok(dir, &["--jobs", "2", "train", "--config", "run.toml"]);
    assert!(stdout.contains("over 2 folds"), "{stdout}");
    for f in ["fold-0", "fold-1"] {
        for file in ["best.ckpt", "metrics.json", "confusion.csv"] {
            assert!(dir.join("runs").join(f).join(file).is_file(), "{f}/{file}");
        }
    }
    assert!(dir.join("runs/manifest.toml").is_file());
    assert!(dir.join("runs/aggregate.json").is_file());

    let table = ok(dir, &["report", "--aggregate", "runs", "--out", "table.md"]);
    assert!(table.starts_with("| run | folds | MF1 |"), "{table}");
    assert!(table.contains("| runs | 2 |"), "{table}");

    let eval = ok(
        dir,
        &["eval", "--config", "run.toml", "--checkpoint", "runs/fold-0/best.ckpt", "--clip", "24", "--out", "ev"],
    );
    assert!(eval.contains("on 16 targets"), "{eval}");
    let csv = fs::read_to_string(dir.join("ev/confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    ok(dir, &["heatmap", "--config", "run.toml", "--recording", "synth-001", "--out", "maps"]);
    assert_eq!(fs::read_dir(dir.join("maps")).unwrap().count(), 7);
}
