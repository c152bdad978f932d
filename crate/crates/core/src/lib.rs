//! Code-mixed corpus synthesis and a small ULMFiT-style training pipeline.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: parallel (native / translated / transliterated) sentence triples
//! - [`markov`]: the three-state Markov chain that picks a variant per sentence
//! - [`tokenizer`]: unigram subword vocabulary training, Viterbi encoding
//! - [`textprep`]: preprocessing, dataset statistics, stratified splits
//! - [`neural`]: tensors, reverse-mode differentiation, LSTM and dropout layers
//! - [`ulmfit`]: weight-dropped LSTM language model, fine-tuning, classifier
//! - [`metrics`]: confusion matrix and weighted precision / recall / F1
//! - [`cli`]: the `codemix` command-line front end
//!
//! Runnable walkthroughs for each stage live in `examples/`:
//!
//! ```bash
//! cargo run --release --example synthesize_corpus
//! ```

pub mod cli;
pub mod corpus;
pub mod fixtures;
pub mod markov;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod textprep;
pub mod tokenizer;
pub mod ulmfit;
