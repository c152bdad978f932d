//! Whole pipeline on the built-in fixtures: synthesize a code-mixed corpus,
//! train a tokenizer, pretrain and fine-tune the language model, train the
//! classifier, and report weighted F1 on the held-out split.
//!
//!     cargo run --release --example end_to_end -- [seed]

use std::time::Instant;

use anyhow::Result;
use codemix::fixtures::{self, FIXTURE_SEED, LABELED_SIZE, MIXING_MATRIX, PARALLEL_SIZE};
use codemix::markov::{sample_states, synthesize, MixState, TransitionMatrix};
use codemix::metrics::evaluate;
use codemix::textprep::{preprocess, split_train_valid};
use codemix::tokenizer::{train_unigram, TrainerOptions};
use codemix::ulmfit::{
    build_classifier, finetune_lm, predict_many, pretrain_lm, train_classifier, AwdLstmConfig, ClassifierConfig,
    ClassifierPreset, LmTrainConfig,
};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(FIXTURE_SEED);
    let t0 = Instant::now();

    let parallel = fixtures::parallel_corpus(PARALLEL_SIZE, seed)?;
    let matrix = TransitionMatrix::new(MIXING_MATRIX)?;
    let states = sample_states(&matrix, MixState::Native, parallel.len(), seed)?;
    let synthetic = synthesize(&parallel, &states)?;
    println!("synthesized {} lines ({:.1?})", synthetic.len(), t0.elapsed());

    let vocab = train_unigram(&synthetic, 300, &TrainerOptions::default())?;
    println!("tokenizer: {} pieces ({:.1?})", vocab.len(), t0.elapsed());

    let config = AwdLstmConfig {
        embedding_dim: 32,
        hidden_dim: 64,
        bptt: 35,
        ..AwdLstmConfig::toy(vocab.id_space())
    };
    let (lm, log) = pretrain_lm(config, &vocab, &synthetic, &LmTrainConfig::pretrain_default(), seed)?;
    let last = log.last().expect("at least one epoch");
    println!(
        "pretrained: train ppl {:.2}, valid ppl {:.2} ({:.1?})",
        last.train_perplexity,
        last.valid_perplexity.unwrap_or(f64::NAN),
        t0.elapsed()
    );

    let data = fixtures::labeled_toy(LABELED_SIZE, seed);
    let (train, valid) = split_train_valid(&data, 0.2, seed)?;
    let texts: Vec<String> = train.iter().map(|e| preprocess(&e.text)).collect();
    let mut ft = LmTrainConfig::finetune_default();
    for s in &mut ft.schedule.stages {
        s.batch_size = 16;
    }
    let (lm, _) = finetune_lm(lm, &vocab, &texts, &ft, seed)?;
    println!("fine-tuned ({:.1?})", t0.elapsed());

    let cls = build_classifier(&lm, &vocab, ClassifierConfig::default(), seed)?;
    let (cls, _) = train_classifier(cls, &train, &valid, &ClassifierPreset::Tamil.config(), seed)?;
    let texts: Vec<&str> = valid.iter().map(|e| e.text.as_str()).collect();
    let preds: Vec<_> = predict_many(&cls, &texts)?.into_iter().map(|p| p.0).collect();
    let golds: Vec<_> = valid.iter().map(|e| e.label).collect();
    let report = evaluate(&golds, &preds)?;
    println!("{report}");
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
