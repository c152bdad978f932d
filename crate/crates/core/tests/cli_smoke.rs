//! Every subcommand on the bundled fixtures, with short training so the run
//! stays quick.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use codemix::metrics::EvalReport;
use common::pipeline::{differing_artifacts, run_pipeline, SHORT};

fn codemix(dir: &Path, args: &[&str]) -> Output {
    common::pipeline::codemix(dir, SHORT, args)
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report_a = run_pipeline(a.path(), SHORT);
    let report_b = run_pipeline(b.path(), SHORT);
    let report: EvalReport = serde_json::from_str(&report_a).unwrap();
    assert_eq!(report.confusion.total(), 400);
    assert_eq!(report_a, report_b);
    assert_eq!(differing_artifacts(a.path(), b.path()), Vec::<&str>::new());
    assert_eq!(fs::read_to_string(a.path().join("synthetic.txt")).unwrap().lines().count(), 2000);
}

#[test]
fn tokenizer_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lines = "njan ഞാൻ cinema nalla\nnee poda 😀\n";
    fs::write(dir.path().join("in.txt"), lines).unwrap();
    codemix(dir.path(), &["--vocab-size", "60", "tokenizer", "train", "--input", "in.txt", "--out", "v.tsv"]);
    codemix(dir.path(), &["tokenizer", "encode", "--vocab", "v.tsv", "--input", "in.txt", "--out", "ids.txt"]);
    let decoded = codemix(dir.path(), &["tokenizer", "decode", "--vocab", "v.tsv", "--input", "ids.txt"]);
    assert_eq!(String::from_utf8(decoded.stdout).unwrap(), lines);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_codemix")).current_dir(dir.path()).args(args).output().unwrap().status.code()
    };
    assert_eq!(code(&["lm"]), Some(1));
    assert_eq!(code(&["stats", "--bogus"]), Some(1));
    assert_eq!(code(&["--pool", "median", "clf", "train", "--lm", "a", "--vocab", "b", "--train", "c", "--out", "d"]), Some(1));
    fs::write(dir.path().join("bad.jsonl"), "{\"id\": 1, \"text\": \"x\"}\n").unwrap();
    assert_eq!(code(&["stats", "--input", "bad.jsonl"]), Some(2));
    assert_eq!(code(&["stats", "--help"]), Some(0));
}
