//! Regenerates the bundled files under `fixtures/`:
//!
//! - `parallel.jsonl`: word-aligned native / translated / transliterated triples
//! - `labeled.jsonl`: the separable NOT / OFF toy task
//! - `toy.json`: a pipeline config sized for the fixtures
//!
//!     cargo run --example make_fixtures [-- OUT_DIR]

use std::path::PathBuf;

use anyhow::Result;
use codemix::cli::PipelineConfig;
use codemix::corpus::{write_parallel_corpus, CorpusFormat};
use codemix::fixtures::{self, FIXTURE_SEED, LABELED_SIZE, MIXING_MATRIX, PARALLEL_SIZE};
use codemix::textprep::save_labeled;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(fixtures::fixture_dir);
    std::fs::create_dir_all(&dir)?;

    let parallel = fixtures::parallel_corpus(PARALLEL_SIZE, FIXTURE_SEED)?;
    write_parallel_corpus(&parallel, dir.join("parallel.jsonl"), CorpusFormat::Jsonl)?;

    let labeled = fixtures::labeled_toy(LABELED_SIZE, FIXTURE_SEED);
    save_labeled(&labeled, dir.join("labeled.jsonl"))?;

    let matrix: Vec<String> = MIXING_MATRIX.iter().map(|p| p.to_string()).collect();
    let config = PipelineConfig {
        seed: Some(FIXTURE_SEED),
        matrix: matrix.join(","),
        vocab_size: 300,
        embedding_dim: 32,
        hidden_dim: 64,
        n_layers: 2,
        bptt: 35,
        embedding_init: 0.5,
        finetune_batch_size: 16,
        ..PipelineConfig::default()
    };
    std::fs::write(dir.join("toy.json"), serde_json::to_string_pretty(&config)? + "\n")?;

    println!("wrote {} triples, {} labeled examples and toy.json to {}", parallel.len(), labeled.len(), dir.display());
    Ok(())
}
