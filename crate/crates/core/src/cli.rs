//! The `codemix` command-line front end.
//!
//! Every tunable lives in [`PipelineConfig`]. A JSON file passed with
//! `--config` sets any subset of keys; each key also has a `--kebab-case`
//! flag of the same name, and flags win over the file. Paths are per
//! subcommand and are not part of the config.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config), 2 on
//! data errors (unreadable or malformed inputs, training failures).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_parallel_corpus, read_lines, write_lines, CorpusFormat};
use crate::markov::{presets, sample_states, synthesize, MixState, TransitionMatrix};
use crate::metrics::evaluate;
use crate::neural::Pooling;
use crate::textprep::{compute_stats, load_labeled, preprocess, save_labeled, split_train_valid, LabeledExample};
use crate::tokenizer::{decode, load_vocab, save_vocab, train_unigram, viterbi_encode, TokenId, TrainerOptions, UnigramVocab};
use crate::ulmfit::{
    build_classifier, finetune_lm, load_checkpoint, perplexity, predict_many, pretrain_lm, save_checkpoint,
    train_classifier, AwdLstmConfig, Classifier, ClassifierConfig, ClassifierPreset, ClassifierTrainConfig,
    LanguageModel, LmTrainConfig, Stage, TrainSchedule, UnfreezeScope,
};

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "CODEMIX_SEED";

/// A bad flag value or config file; reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

// Declares the config struct, the matching flags, and the key list from one
// table so the two cannot drift apart. `optional` keys have no default and
// fall back to something else when unset.
macro_rules! pipeline_config {
    (
        optional { $( $(#[doc = $odoc:literal])* $oname:ident : $oty:ty, )* }
        keys { $( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr, )* }
    ) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct PipelineConfig {
            pub config_version: u32,
            $( $(#[doc = $odoc])* pub $oname: Option<$oty>, )*
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self {
                    config_version: CONFIG_VERSION,
                    $( $oname: None, )*
                    $( $name: $default, )*
                }
            }
        }

        #[derive(Debug, Clone, Default, Args)]
        pub struct ConfigArgs {
            /// JSON pipeline configuration; flags override its keys.
            #[arg(long, global = true, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $( $(#[doc = $odoc])* #[arg(long, global = true)] pub $oname: Option<$oty>, )*
            $( $(#[doc = $doc])* #[arg(long, global = true)] pub $name: Option<$ty>, )*
        }

        impl ConfigArgs {
            fn apply(&self, c: &mut PipelineConfig) {
                $( if self.$oname.is_some() { c.$oname = self.$oname.clone(); } )*
                $( if let Some(v) = &self.$name { c.$name = v.clone(); } )*
            }
        }

        /// Every config key that has a flag, in declaration order.
        pub const CONFIG_KEYS: &[&str] = &[$( stringify!($oname), )* $( stringify!($name), )*];
    };
}

pipeline_config! {
    optional {
        /// Seed for every random choice; falls back to CODEMIX_SEED, then 0.
        seed: u64,
        /// Classifier dropout multiplicity; defaults to the preset's.
        clf_dropout_multiplicity: f64,
        /// Classifier batch size; defaults to the preset's.
        clf_batch_size: usize,
    }
    keys {
        /// Transition matrix: `model1`, `model2`, or nine comma-separated row-major probabilities.
        matrix: String = "model1".to_string(),
        /// State of the first sentence: native, translated or transliterated.
        initial_state: String = "native".to_string(),
        /// Number of trained subword pieces.
        vocab_size: usize = 8000,
        max_piece_len: usize = 16,
        /// Size of the initial piece inventory; 0 means four times vocab_size.
        seed_vocab_size: usize = 0,
        /// Fraction of prunable pieces kept per pruning step.
        keep_fraction: f64 = 0.75,
        em_rounds_per_prune: usize = 2,
        embedding_dim: usize = 400,
        hidden_dim: usize = 1152,
        n_layers: usize = 3,
        bptt: usize = 70,
        /// Embeddings start uniform in +-embedding_init.
        embedding_init: f64 = 0.1,
        tie_weights: bool = true,
        pretrain_epochs: usize = 10,
        pretrain_lr: f64 = 1e-2,
        pretrain_batch_size: usize = 16,
        pretrain_dropout_multiplicity: f64 = 1.0,
        finetune_last_layer_epochs: usize = 1,
        finetune_last_layer_lr: f64 = 1e-2,
        finetune_all_epochs: usize = 5,
        finetune_all_lr: f64 = 1e-3,
        finetune_batch_size: usize = 64,
        finetune_dropout_multiplicity: f64 = 0.3,
        /// Held-out fraction for `split`, language-model validation, and `clf train` without --valid.
        valid_fraction: f64 = 0.2,
        /// Classifier preset: malayalam-mixed, malayalam or tamil.
        preset: String = "tamil".to_string(),
        clf_head_epochs: usize = 1,
        clf_head_lr: f64 = 2e-2,
        clf_last_layer_epochs: usize = 2,
        clf_last_layer_lr: f64 = 1e-2,
        clf_all_epochs: usize = 5,
        clf_all_lr: f64 = 1e-3,
        head_hidden_dim: usize = 50,
        /// Pooling over encoder outputs: concat ([last, max, mean]) or last.
        pool: String = "concat".to_string(),
        /// Longest token sequence the classifier reads; longer inputs are truncated.
        max_len: usize = 512,
        /// Keep the classifier epoch with the best validation score: f1 or none.
        select_best_epoch_by: String = "f1".to_string(),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let c: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if c.config_version != CONFIG_VERSION {
            return Err(usage(format!(
                "config {}: config_version {} is not supported (expected {CONFIG_VERSION})",
                path.display(),
                c.config_version
            )));
        }
        Ok(c)
    }

    /// Explicit seed, else `CODEMIX_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn matrix(&self) -> Result<TransitionMatrix> {
        if let Some(m) = presets::by_name(&self.matrix) {
            return Ok(m);
        }
        self.matrix.parse().map_err(|e| usage(format!("matrix {:?}: {e}", self.matrix)))
    }

    pub fn initial_state(&self) -> Result<MixState> {
        self.initial_state.parse().map_err(|e| usage(format!("initial_state: {e}")))
    }

    pub fn trainer_options(&self) -> TrainerOptions {
        TrainerOptions {
            max_piece_len: self.max_piece_len,
            seed_size: (self.seed_vocab_size > 0).then_some(self.seed_vocab_size),
            keep_fraction: self.keep_fraction,
            em_rounds_per_prune: self.em_rounds_per_prune,
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> AwdLstmConfig {
        AwdLstmConfig {
            vocab_size,
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            bptt: self.bptt,
            embedding_init: self.embedding_init,
            tie_weights: self.tie_weights,
            ..AwdLstmConfig::full_scale(vocab_size)
        }
    }

    pub fn pretrain_config(&self) -> LmTrainConfig {
        LmTrainConfig {
            schedule: TrainSchedule {
                stages: vec![Stage {
                    scope: UnfreezeScope::All,
                    epochs: self.pretrain_epochs,
                    lr: self.pretrain_lr,
                    batch_size: self.pretrain_batch_size,
                }],
            },
            dropout_multiplicity: self.pretrain_dropout_multiplicity,
            valid_fraction: self.valid_fraction,
        }
    }

    pub fn finetune_config(&self) -> LmTrainConfig {
        let stage = |scope, epochs, lr| Stage { scope, epochs, lr, batch_size: self.finetune_batch_size };
        LmTrainConfig {
            schedule: TrainSchedule {
                stages: vec![
                    stage(UnfreezeScope::LastLayer, self.finetune_last_layer_epochs, self.finetune_last_layer_lr),
                    stage(UnfreezeScope::All, self.finetune_all_epochs, self.finetune_all_lr),
                ],
            },
            dropout_multiplicity: self.finetune_dropout_multiplicity,
            valid_fraction: self.valid_fraction,
        }
    }

    pub fn classifier_config(&self) -> Result<ClassifierConfig> {
        let pooling = match self.pool.as_str() {
            "concat" => Pooling::Concat,
            "last" => Pooling::Last,
            other => return Err(usage(format!("pool {other:?}: expected concat or last"))),
        };
        Ok(ClassifierConfig {
            head_hidden_dim: self.head_hidden_dim,
            pooling,
            max_len: self.max_len,
            ..ClassifierConfig::default()
        })
    }

    pub fn classifier_train_config(&self) -> Result<ClassifierTrainConfig> {
        let preset: ClassifierPreset = self.preset.parse().map_err(|e| usage(format!("{e}")))?;
        let base = preset.config();
        let batch_size = self.clf_batch_size.unwrap_or(base.schedule.stages[0].batch_size);
        let stage = |scope, epochs, lr| Stage { scope, epochs, lr, batch_size };
        let select_best_epoch = match self.select_best_epoch_by.as_str() {
            "f1" => true,
            "none" => false,
            other => return Err(usage(format!("select_best_epoch_by {other:?}: expected f1 or none"))),
        };
        Ok(ClassifierTrainConfig {
            dropout_multiplicity: self.clf_dropout_multiplicity.unwrap_or(base.dropout_multiplicity),
            schedule: TrainSchedule {
                stages: vec![
                    stage(UnfreezeScope::HeadOnly, self.clf_head_epochs, self.clf_head_lr),
                    stage(UnfreezeScope::LastLayer, self.clf_last_layer_epochs, self.clf_last_layer_lr),
                    stage(UnfreezeScope::All, self.clf_all_epochs, self.clf_all_lr),
                ],
            },
            select_best_epoch,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "codemix", version, about = "Code-mixed corpus synthesis and ULMFiT-style classification")]
#[command(subcommand_required = true, arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick one variant per sentence of a parallel corpus with the Markov chain.
    Synthesize {
        /// Parallel corpus (JSONL `{native, translated, transliterated}` or TSV).
        #[arg(long)]
        parallel: PathBuf,
        /// Input format; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<CorpusFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the sampled state of each line.
        #[arg(long)]
        states_out: Option<PathBuf>,
    },
    /// Train, apply or invert the unigram subword tokenizer.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Dataset statistics of a labeled file.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Stratified train / validation split of a labeled file.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        valid_out: PathBuf,
    },
    /// Language model pre-training, fine-tuning and evaluation.
    #[command(subcommand)]
    Lm(LmCommand),
    /// Classifier training, prediction and evaluation.
    #[command(subcommand)]
    Clf(ClfCommand),
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCommand {
    /// Learn a vocabulary from a text file (one sentence per line).
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode lines to space-separated ids (or pieces).
    Encode {
        #[arg(long)]
        vocab: PathBuf,
        /// Defaults to stdin.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print pieces instead of ids.
        #[arg(long)]
        pieces: bool,
    },
    /// Decode lines of space-separated ids.
    Decode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LmCommand {
    /// Train a fresh language model on a text file.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training on target-domain text (labeled file or plain lines).
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perplexity of a model on a text file.
    Perplexity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClfCommand {
    /// Train a classifier on top of a (fine-tuned) language model.
    Train {
        /// Language model checkpoint.
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Validation data; split off the training file when omitted.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels; writes `id<TAB>label<TAB>p(NOT)<TAB>p(OFF)`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Labeled file, or plain text with one example per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted precision / recall / F1 on a labeled file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("run with --help for usage");
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

/// Config file, then flags.
pub fn resolve_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut c = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    args.apply(&mut c);
    Ok(c)
}

pub fn execute(cli: Cli) -> Result<()> {
    let c = resolve_config(&cli.config)?;
    let seed = c.resolved_seed()?;
    match cli.command {
        Command::Synthesize { parallel, format, out, states_out } => {
            let (matrix, initial) = (c.matrix()?, c.initial_state()?);
            let format = format.unwrap_or_else(|| CorpusFormat::from_path(&parallel));
            let corpus = load_parallel_corpus(&parallel, format)?;
            let states = sample_states(&matrix, initial, corpus.len(), seed)?;
            let lines = synthesize(&corpus, &states)?;
            info!("synthesized {} lines", lines.len());
            if let Some(p) = states_out {
                write_lines(&states.to_lines(), p)?;
            }
            emit(out.as_deref(), &join_lines(&lines))
        }
        Command::Tokenizer(cmd) => tokenizer_command(cmd, &c),
        Command::Stats { input, json } => {
            let stats = compute_stats(&load_labeled(&input)?)?;
            let text = if json { serde_json::to_string_pretty(&stats)? + "\n" } else { stats.to_string() };
            emit(None, &text)
        }
        Command::Split { input, train_out, valid_out } => {
            let data = load_labeled(&input)?;
            let (train, valid) = split_train_valid(&data, c.valid_fraction, seed)?;
            info!("split {} examples into {} train / {} valid", data.len(), train.len(), valid.len());
            save_labeled(&train, train_out)?;
            save_labeled(&valid, valid_out)?;
            Ok(())
        }
        Command::Lm(cmd) => lm_command(cmd, &c, seed),
        Command::Clf(cmd) => clf_command(cmd, &c, seed),
    }
}

fn tokenizer_command(cmd: TokenizerCommand, c: &PipelineConfig) -> Result<()> {
    match cmd {
        TokenizerCommand::Train { input, out } => {
            let lines = read_lines(&input)?;
            let vocab = train_unigram(&lines, c.vocab_size, &c.trainer_options())?;
            info!("trained {} pieces", vocab.len());
            save_vocab(&vocab, out)?;
            Ok(())
        }
        TokenizerCommand::Encode { vocab, input, out, pieces } => {
            let vocab = load_vocab(vocab)?;
            let mut text = String::new();
            for line in read_input(input.as_deref())?.lines() {
                let ids = viterbi_encode(&vocab, line).ids;
                let cols: Vec<String> = if pieces {
                    ids.iter().map(|&id| vocab.piece_str(id)).collect::<Result<_, _>>()?
                } else {
                    ids.iter().map(|id| id.to_string()).collect()
                };
                text.push_str(&cols.join(" "));
                text.push('\n');
            }
            emit(out.as_deref(), &text)
        }
        TokenizerCommand::Decode { vocab, input, out } => {
            let vocab = load_vocab(vocab)?;
            let mut text = String::new();
            for (i, line) in read_input(input.as_deref())?.lines().enumerate() {
                let ids: Vec<TokenId> = line
                    .split_whitespace()
                    .map(|t| t.parse().with_context(|| format!("line {}: bad id {t:?}", i + 1)))
                    .collect::<Result<_>>()?;
                text.push_str(&decode(&vocab, &ids)?);
                text.push('\n');
            }
            emit(out.as_deref(), &text)
        }
    }
}

fn lm_command(cmd: LmCommand, c: &PipelineConfig, seed: u64) -> Result<()> {
    match cmd {
        LmCommand::Pretrain { corpus, vocab, out } => {
            let vocab = load_vocab(vocab)?;
            let lines = read_lines(&corpus)?;
            let (model, log) = pretrain_lm(c.lm_config(vocab.id_space()), &vocab, &lines, &c.pretrain_config(), seed)?;
            if let Some(last) = log.last() {
                info!("final train perplexity {:.3}", last.train_perplexity);
            }
            model.save(out)?;
            Ok(())
        }
        LmCommand::Finetune { model, vocab, input, out } => {
            let vocab = load_vocab(vocab)?;
            let model = LanguageModel::load(model)?;
            let texts = read_texts(&input)?;
            let (model, _) = finetune_lm(model, &vocab, &texts, &c.finetune_config(), seed)?;
            model.save(out)?;
            Ok(())
        }
        LmCommand::Perplexity { model, vocab, input } => {
            let vocab = load_vocab(vocab)?;
            let model = LanguageModel::load(model)?;
            check_fingerprint(&model.vocab_fingerprint, &vocab)?;
            let stream: Vec<TokenId> = read_lines(&input)?
                .iter()
                .flat_map(|l| viterbi_encode(&vocab, l).ids)
                .collect();
            let batch = c.pretrain_batch_size.min(stream.len() / 2).max(1);
            let ppl = perplexity(&model, &stream, batch, model.config.bptt)?;
            emit(None, &format!("{ppl:.6}\n"))
        }
    }
}

fn clf_command(cmd: ClfCommand, c: &PipelineConfig, seed: u64) -> Result<()> {
    match cmd {
        ClfCommand::Train { lm, vocab, train, valid, out } => {
            let (cls_config, train_config) = (c.classifier_config()?, c.classifier_train_config()?);
            let vocab = load_vocab(vocab)?;
            let lm = LanguageModel::load(lm)?;
            let data = load_labeled(&train)?;
            let (train, valid) = match valid {
                Some(p) => (data, load_labeled(&p)?),
                None => split_train_valid(&data, c.valid_fraction, seed)?,
            };
            let cls = build_classifier(&lm, &vocab, cls_config, seed)?;
            let (cls, _) = train_classifier(cls, &train, &valid, &train_config, seed)?;
            save_checkpoint(&cls.to_checkpoint(), out)?;
            Ok(())
        }
        ClfCommand::Predict { model, vocab, input, out } => {
            let cls = load_classifier(&model, &vocab)?;
            let examples = read_examples(&input)?;
            let texts: Vec<&str> = examples.iter().map(|(_, t)| t.as_str()).collect();
            let mut text = String::new();
            for ((id, _), (label, probs)) in examples.iter().zip(predict_many(&cls, &texts)?) {
                text.push_str(&format!("{id}\t{label}\t{:.6}\t{:.6}\n", probs[0], probs[1]));
            }
            emit(out.as_deref(), &text)
        }
        ClfCommand::Eval { model, vocab, input, json, out } => {
            let cls = load_classifier(&model, &vocab)?;
            let data = load_labeled(&input)?;
            let texts: Vec<&str> = data.iter().map(|e| e.text.as_str()).collect();
            let preds: Vec<_> = predict_many(&cls, &texts)?.into_iter().map(|p| p.0).collect();
            let golds: Vec<_> = data.iter().map(|e| e.label).collect();
            let report = evaluate(&golds, &preds)?;
            let text = if json { serde_json::to_string_pretty(&report)? + "\n" } else { report.to_string() };
            emit(out.as_deref(), &text)
        }
    }
}

fn check_fingerprint(expected: &str, vocab: &UnigramVocab) -> Result<()> {
    let found = vocab.fingerprint();
    if expected != found {
        anyhow::bail!(crate::ulmfit::UlmfitError::FingerprintMismatch { expected: expected.to_string(), found });
    }
    Ok(())
}

fn load_classifier(model: &Path, vocab: &Path) -> Result<Classifier> {
    let vocab = load_vocab(vocab)?;
    Ok(Classifier::from_checkpoint(&load_checkpoint(model)?, &vocab)?)
}

fn is_labeled_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json" | "tsv" | "tab"))
}

/// Preprocessed texts from a labeled file or a plain-text file.
fn read_texts(path: &Path) -> Result<Vec<String>> {
    Ok(read_examples(path)?.into_iter().map(|(_, t)| preprocess(&t)).collect())
}

/// `(id, raw text)` pairs; plain-text lines get their 1-based line number as id.
fn read_examples(path: &Path) -> Result<Vec<(String, String)>> {
    if is_labeled_path(path) {
        Ok(load_labeled(path)?
            .into_iter()
            .map(|LabeledExample { id, text, .. }| (id, text))
            .collect())
    } else {
        Ok(read_lines(path)?
            .into_iter()
            .enumerate()
            .map(|(i, t)| ((i + 1).to_string(), t))
            .collect())
    }
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn join_lines<S: AsRef<str>>(lines: &[S]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    s
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
