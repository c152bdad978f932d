//! Pretrains the weight-dropped LSTM language model on the synthetic corpus,
//! saves a checkpoint, reloads it and checks the held-out perplexity.
//!
//!     cargo run --release --example pretrain_lm -- [epochs] [checkpoint]

use anyhow::Result;
use codemix::fixtures::{self, FIXTURE_SEED, MIXING_MATRIX, PARALLEL_SIZE};
use codemix::markov::{sample_states, synthesize, MixState, TransitionMatrix};
use codemix::tokenizer::{train_unigram, viterbi_encode, TrainerOptions};
use codemix::ulmfit::{perplexity, pretrain_lm, AwdLstmConfig, LanguageModel, LmTrainConfig};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let path = args.next().unwrap_or_else(|| std::env::temp_dir().join("codemix_lm.ckpt").display().to_string());

    let parallel = fixtures::parallel_corpus(PARALLEL_SIZE, FIXTURE_SEED)?;
    let states = sample_states(&TransitionMatrix::new(MIXING_MATRIX)?, MixState::Native, parallel.len(), FIXTURE_SEED)?;
    let lines = synthesize(&parallel, &states)?;
    let (train, held_out) = lines.split_at(lines.len() * 9 / 10);
    let vocab = train_unigram(train, 300, &TrainerOptions::default())?;

    let mut cfg = LmTrainConfig::pretrain_default();
    cfg.schedule.stages.iter_mut().for_each(|s| s.epochs = epochs);
    let config = AwdLstmConfig { embedding_dim: 32, hidden_dim: 64, ..AwdLstmConfig::toy(vocab.id_space()) };
    let (lm, log) = pretrain_lm(config, &vocab, train, &cfg, FIXTURE_SEED)?;
    for e in &log {
        let valid = e.valid_perplexity.map_or("-".to_string(), |p| format!("{p:.2}"));
        println!("epoch {}: train ppl {:.2}, valid ppl {valid}", e.epoch, e.train_perplexity);
    }

    lm.save(&path)?;
    let back = LanguageModel::load(&path)?;
    let stream: Vec<_> = held_out.iter().flat_map(|l| viterbi_encode(&vocab, l).ids).collect();
    let (a, b) = (perplexity(&lm, &stream, 8, 35)?, perplexity(&back, &stream, 8, 35)?);
    println!("held-out perplexity {a:.3} (reloaded from {path}: {b:.3}, uniform would be {})", vocab.id_space());
    assert_eq!(a.to_bits(), b.to_bits());
    Ok(())
}
