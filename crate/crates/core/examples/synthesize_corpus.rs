//! Samples a mixing-state chain over the bundled parallel corpus and writes
//! the code-mixed result, then compares empirical transition and visit
//! frequencies with the matrix.
//!
//!     cargo run --release --example synthesize_corpus -- [model-1|model-2] [seed]

use anyhow::{Context, Result};
use codemix::corpus::{load_parallel_corpus, CorpusFormat};
use codemix::fixtures::{fixture_dir, FIXTURE_SEED, MIXING_MATRIX};
use codemix::markov::{
    empirical_transition_frequencies, presets, sample_states, synthesize, visit_frequencies, MixState, TransitionMatrix,
};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let matrix = match args.next() {
        Some(name) => presets::by_name(&name).with_context(|| format!("unknown preset {name}"))?,
        None => TransitionMatrix::new(MIXING_MATRIX)?,
    };
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(FIXTURE_SEED);

    let corpus = load_parallel_corpus(fixture_dir().join("parallel.jsonl"), CorpusFormat::Jsonl)?;
    let states = sample_states(&matrix, MixState::Native, corpus.len(), seed)?;
    let lines = synthesize(&corpus, &states)?;

    for (line, state) in lines.iter().zip(states.states()).take(8) {
        println!("{:>15}  {line}", state.name());
    }
    println!("... {} lines\n", lines.len());

    let freq = empirical_transition_frequencies(&states)?;
    println!("from \\ to        matrix                 empirical");
    for (a, row) in matrix.rows().iter().enumerate() {
        let name = MixState::from_index(a).expect("three states").name();
        println!("{name:>15}  {row:.3?}  {:.3?}", freq[a]);
    }
    println!("\nvisits {:.3?}", visit_frequencies(&states));
    println!("stationary {:.3?}", matrix.stationary(1000));
    Ok(())
}
