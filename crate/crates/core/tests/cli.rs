//! The `hmnet` binary: exit codes, written files and report cardinality.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
dataset = "sinusoid"
synthetic_steps = 300
synthetic_vars = 3

[model]
input_length = 16
horizon = 4
hidden_dim = 8
block_sizes = [4, 4]
memory_capacity = 64
top_k = 4

[train]
max_epochs = 1
max_batches_per_epoch = 2
"#;

fn hmnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmnet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), format!("{TINY}{extra}")).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_reports(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json"))
        .collect();
    v.sort();
    v
}

#[test]
fn selfcheck_passes_and_detects_corrupt_mask() {
    let dir = tempfile::tempdir().unwrap();
    let ok = hmnet(dir.path(), &["selfcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).lines().filter(|l| l.starts_with("PASS")).count(), 6);
    assert!(stdout(&ok).contains("max_error="));
    let bad = hmnet(dir.path(), &["selfcheck", "--corrupt-mask"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).lines().any(|l| l.starts_with("FAIL") && l.contains("diag(W_v)")));
}

#[test]
fn ingest_is_deterministic_and_rejects_bad_csv() {
    let dir = setup("");
    let a = hmnet(dir.path(), &["--config", "run.toml", "--out", "o", "ingest"]);
    assert_eq!(a.status.code(), Some(0));
    let b = hmnet(dir.path(), &["--config", "run.toml", "--out", "o", "ingest"]);
    let sum = |o: &Output| stdout(o).split("sha256 ").nth(1).unwrap().trim().to_string();
    assert_eq!(sum(&a), sum(&b));
    assert!(stdout(&a).contains("300 rows x 3 variables"));

    std::fs::write(dir.path().join("bad.csv"), "date,a\n2020-01-01 00:00,1\n2020-01-01 01:00,oops\n").unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[data]\ndataset = \"bad\"\ncsv = \"bad.csv\"\n[model]\ninput_length = 16\nhorizon = 4\nblock_sizes = [4, 4]\n",
    )
    .unwrap();
    let bad = hmnet(dir.path(), &["--config", "bad.toml", "--out", "b", "ingest"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line"));
    assert!(!dir.path().join("b").exists());
}

#[test]
fn train_then_eval() {
    let dir = setup("");
    let t = hmnet(dir.path(), &["--config", "run.toml", "--out", "o", "--seed", "3", "train"]);
    assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
    let out = dir.path().join("o");
    assert_eq!(json_reports(&out), ["sinusoid_4_full.json"]);
    assert!(out.join("sinusoid_4_full.ckpt").exists());
    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("seeds = [3]") && resolved.contains("learning_rate"));
    let e = hmnet(dir.path(), &["--config", "run.toml", "--out", "o", "eval"]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    assert!(stdout(&e).contains("full_eval"));
}

#[test]
fn sweeps_write_expected_rows() {
    let dir = setup("");
    let a = hmnet(dir.path(), &["--config", "run.toml", "--out", "a", "--jobs", "2", "ablate"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(json_reports(&dir.path().join("a")).len(), 4);

    let n = hmnet(dir.path(), &["--config", "run.toml", "--out", "n", "noise"]);
    assert_eq!(n.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("n/noise.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);

    let m = hmnet(dir.path(), &["--config", "run.toml", "--out", "m", "--horizon", "8", "memsweep"]);
    assert_eq!(m.status.code(), Some(0));
    assert!(json_reports(&dir.path().join("m")).iter().all(|f| f.starts_with("sinusoid_8_m")));
}

#[test]
fn validation_errors_exit_one() {
    let dir = setup("");
    let bad_blocks = hmnet(dir.path(), &["--config", "run.toml", "--horizon", "4", "--out", "x", "train"]);
    assert_eq!(bad_blocks.status.code(), Some(0));
    std::fs::write(dir.path().join("blocks.toml"), "[model]\nblock_sizes = [6, 4, 5]\n").unwrap();
    let o = hmnet(dir.path(), &["--config", "blocks.toml", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("4 % 5"));
    assert_eq!(hmnet(dir.path(), &["--config", "missing.toml", "train"]).status.code(), Some(1));
    assert_eq!(hmnet(dir.path(), &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(hmnet(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_two() {
    let dir = setup("learning_rate = 1e300\n");
    let o = hmnet(dir.path(), &["--config", "run.toml", "--out", "o", "train"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}
