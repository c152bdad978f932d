//! Drives the `codemix` binary through the whole pipeline on the bundled
//! fixtures.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use codemix::fixtures::fixture_dir;

/// One epoch per stage, for quick smoke runs.
pub const SHORT: &[&str] = &[
    "--pretrain-epochs", "1",
    "--finetune-last-layer-epochs", "1",
    "--finetune-all-epochs", "1",
    "--clf-head-epochs", "1",
    "--clf-last-layer-epochs", "1",
    "--clf-all-epochs", "1",
];

/// Files every pipeline run leaves behind, compared across runs.
pub const ARTIFACTS: &[&str] = &[
    "synthetic.txt", "states.txt", "vocab.tsv", "stats.json", "train.jsonl", "valid.jsonl",
    "lm.ckpt", "lm_ft.ckpt", "clf.ckpt", "preds.tsv", "report.json",
];

/// Runs the binary in `dir` with the bundled config plus `extra` global
/// flags; panics with stderr on failure.
pub fn codemix(dir: &Path, extra: &[&str], args: &[&str]) -> Output {
    let config = fixture_dir().join("toy.json");
    let out = Command::new(env!("CARGO_BIN_EXE_codemix"))
        .current_dir(dir)
        .env_remove("CODEMIX_SEED")
        .env_remove("RUST_LOG")
        .arg("--config")
        .arg(config)
        .args(extra)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "codemix {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Whole pipeline in `dir`. Returns stdout of `clf eval --json`, which is
/// also written to `report.json`.
pub fn run_pipeline(dir: &Path, extra: &[&str]) -> String {
    let fx = fixture_dir();
    let parallel = fx.join("parallel.jsonl");
    let labeled = fx.join("labeled.jsonl");
    let (parallel, labeled) = (parallel.to_str().unwrap(), labeled.to_str().unwrap());
    let run = |args: &[&str]| codemix(dir, extra, args);
    run(&["synthesize", "--parallel", parallel, "--out", "synthetic.txt", "--states-out", "states.txt"]);
    run(&["tokenizer", "train", "--input", "synthetic.txt", "--out", "vocab.tsv"]);
    let stats = run(&["stats", "--input", labeled, "--json"]);
    fs::write(dir.join("stats.json"), &stats.stdout).unwrap();
    run(&["split", "--input", labeled, "--train-out", "train.jsonl", "--valid-out", "valid.jsonl"]);
    run(&["lm", "pretrain", "--corpus", "synthetic.txt", "--vocab", "vocab.tsv", "--out", "lm.ckpt"]);
    run(&["lm", "finetune", "--model", "lm.ckpt", "--vocab", "vocab.tsv", "--input", "train.jsonl", "--out", "lm_ft.ckpt"]);
    run(&["clf", "train", "--lm", "lm_ft.ckpt", "--vocab", "vocab.tsv", "--train", "train.jsonl", "--valid", "valid.jsonl", "--out", "clf.ckpt"]);
    run(&["clf", "predict", "--model", "clf.ckpt", "--vocab", "vocab.tsv", "--input", "valid.jsonl", "--out", "preds.tsv"]);
    let eval = run(&["clf", "eval", "--model", "clf.ckpt", "--vocab", "vocab.tsv", "--input", "valid.jsonl", "--json"]);
    let report = String::from_utf8(eval.stdout).unwrap();
    fs::write(dir.join("report.json"), &report).unwrap();
    report
}

/// Artifacts whose bytes differ between two run directories.
pub fn differing_artifacts(a: &Path, b: &Path) -> Vec<&'static str> {
    ARTIFACTS
        .iter()
        .copied()
        .filter(|name| fs::read(a.join(name)).unwrap() != fs::read(b.join(name)).unwrap())
        .collect()
}
