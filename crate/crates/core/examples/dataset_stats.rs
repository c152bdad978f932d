//! Preprocesses a labelled file, prints its statistics and writes a
//! stratified train/validation split.
//!
//!     cargo run --release --example dataset_stats -- [labeled.jsonl|.tsv] [out-dir]

use std::path::PathBuf;

use anyhow::Result;
use codemix::fixtures::fixture_dir;
use codemix::textprep::{compute_stats, load_labeled, preprocess, save_labeled, split_train_valid};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next().map(PathBuf::from).unwrap_or_else(|| fixture_dir().join("labeled.jsonl"));
    let data = load_labeled(&input)?;

    for e in data.iter().take(5) {
        println!("[{}] {}\n      -> {}", e.label, e.text, preprocess(&e.text));
    }
    println!("\n{}", compute_stats(&data)?);

    let (train, valid) = split_train_valid(&data, 0.2, 1)?;
    println!("train {}\n{}", train.len(), compute_stats(&train)?);
    println!("valid {}\n{}", valid.len(), compute_stats(&valid)?);
    if let Some(dir) = args.next().map(PathBuf::from) {
        std::fs::create_dir_all(&dir)?;
        save_labeled(&train, dir.join("train.jsonl"))?;
        save_labeled(&valid, dir.join("valid.jsonl"))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
