//! Helpers shared by the CLI and acceptance targets.
#![allow(dead_code)]

pub mod reference;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ctg-ssl"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn ctg-ssl")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const SMALL_CONFIG: &str = "\
d_model = 16
heads = 2
enc_layers = 1
dec_layers = 1
cnn_channels = 4
cnn_blocks = 1
steps = 6
batch_size = 8
snapshot_interval = 3
";

/// generate -> pretrain -> probe -> sweep -> dropout-eval under `--threads 1`.
/// Returns the artifacts that must be reproducible, as (relative path, bytes).
pub fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("config.txt"), SMALL_CONFIG).unwrap();
    run_ok(&["--threads", "1", "generate", "--n", "12", "--duration", "2400", "--seed", "5", "--out", &p("pre")]);
    run_ok(&["--threads", "1", "generate", "--n", "40", "--seed", "6", "--out", &p("lab")]);
    run_ok(&["--threads", "1", "pretrain", "--config", &p("config.txt"), "--data", &p("pre"), "--out", &p("run")]);
    let ck = p("run/checkpoint.bin");
    let labels = p("lab/labels.csv");
    let eval = ["--ckpt", &ck, "--data", &p("lab"), "--labels", &labels];
    run_ok(&[&["--threads", "1", "probe"][..], &eval, &["--out", &p("probe")]].concat());
    run_ok(&[&["--threads", "1", "sweep"][..], &eval, &["--fractions", "0.5,1.0", "--out", &p("sweep")]].concat());
    run_ok(&[&["--threads", "1", "dropout-eval"][..], &eval, &["--out", &p("drop")]].concat());
    let files = [
        "pre/records.ndjson",
        "pre/labels.csv",
        "run/checkpoint.bin",
        "run/checkpoint_step000003.bin",
        "run/metrics.ndjson",
        "probe/probe.csv",
        "probe/probe.ndjson",
        "sweep/sweep.csv",
        "sweep/sweep_plot.csv",
        "drop/dropout.csv",
        "drop/dropout.ndjson",
    ];
    files
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"))))
        .collect()
}
