//! Trains a unigram subword vocabulary on the synthetic corpus and shows how
//! native-script, transliterated and mixed sentences segment.
//!
//!     cargo run --release --example train_tokenizer -- [vocab-size]

use anyhow::Result;
use codemix::fixtures::{self, FIXTURE_SEED, MIXING_MATRIX, PARALLEL_SIZE};
use codemix::markov::{sample_states, synthesize, MixState, TransitionMatrix};
use codemix::tokenizer::{corpus_log_likelihood, decode, train_unigram, viterbi_encode, TrainerOptions, WordCounts};

fn main() -> Result<()> {
    let size: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let parallel = fixtures::parallel_corpus(PARALLEL_SIZE, FIXTURE_SEED)?;
    let states = sample_states(&TransitionMatrix::new(MIXING_MATRIX)?, MixState::Native, parallel.len(), FIXTURE_SEED)?;
    let lines = synthesize(&parallel, &states)?;

    let vocab = train_unigram(&lines, size, &TrainerOptions::default())?;
    let words = WordCounts::from_lines(&lines);
    println!(
        "{} pieces, corpus log-likelihood {:.1}, fingerprint {}",
        vocab.len(),
        corpus_log_likelihood(&vocab, &words)?,
        &vocab.fingerprint()[..12]
    );
    let longest: Vec<_> = {
        let mut p: Vec<_> = vocab.pieces().iter().filter(|(s, _)| s.chars().count() > 3).collect();
        p.sort_by(|a, b| b.1.total_cmp(&a.1));
        p.into_iter().take(10).map(|(s, _)| s.as_str()).collect()
    };
    println!("frequent long pieces: {}\n", longest.join(" "));

    for text in parallel.triples().iter().take(2).flat_map(|t| t.fields()).chain(["zxqv ☃ unseen"]) {
        let seg = viterbi_encode(&vocab, text);
        let pieces: Vec<String> = seg.ids.iter().map(|&id| vocab.piece_str(id)).collect::<Result<_, _>>()?;
        println!("{text}\n  {}  (score {:.2})", pieces.join(" "), seg.score);
        assert_eq!(decode(&vocab, &seg.ids)?, codemix::tokenizer::normalize(text));
    }
    Ok(())
}
