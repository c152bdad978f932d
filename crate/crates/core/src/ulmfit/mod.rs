//! Weight-dropped LSTM language model, BPTT batching, LM pretraining and
//! fine-tuning, and the pooled classifier trained with gradual unfreezing.

mod checkpoint;
mod classifier;
mod lm;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use classifier::{
    build_classifier, classifier_logits, classifier_loss, predict, predict_ids, predict_many, train_classifier,
    Classifier, ClassifierConfig, ClassifierEpochLog, ClassifierPreset, ClassifierTrainConfig,
};
pub use lm::{
    bptt_batches, finetune_lm, lm_forward, lm_loss, new_lm, perplexity, pretrain_lm, BpttWindow, DropoutNoise,
    HiddenState, LanguageModel, LmEpochLog, LmTrainConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::NeuralError;

#[derive(Debug, Error)]
pub enum UlmfitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("token stream of {len} ids is too short (need at least {needed})")]
    StreamTooShort { len: usize, needed: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("vocabulary fingerprint mismatch: model has {expected}, tokenizer has {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("training set contains a single class")]
    SingleClassTrainSet,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint manifest: {0}")]
    CorruptManifest(String),
    #[error("checkpoint payload truncated: need {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    WrongModelKind { expected: ModelKind, found: ModelKind },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four dropout sites of the weight-dropped LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutSite {
    Embedding,
    Input,
    Weight,
    Between,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDropouts {
    pub embedding: f64,
    pub input: f64,
    pub weight: f64,
    pub between: f64,
}

impl Default for BaseDropouts {
    fn default() -> Self {
        Self {
            embedding: 0.02,
            input: 0.1,
            weight: 0.2,
            between: 0.2,
        }
    }
}

impl BaseDropouts {
    pub fn get(&self, site: DropoutSite) -> f64 {
        match site {
            DropoutSite::Embedding => self.embedding,
            DropoutSite::Input => self.input,
            DropoutSite::Weight => self.weight,
            DropoutSite::Between => self.between,
        }
    }
}

/// `clamp(multiplicity * base, 0, 0.99)`.
pub fn scaled_rate(multiplicity: f64, base: f64) -> f64 {
    (multiplicity * base).clamp(0.0, 0.99)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwdLstmConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub base_dropouts: BaseDropouts,
    #[serde(default = "one")]
    pub dropout_multiplicity: f64,
    #[serde(default = "default_bptt")]
    pub bptt: usize,
    #[serde(default = "yes")]
    pub tie_weights: bool,
    /// Embeddings start uniform in `+-embedding_init`.
    #[serde(default = "default_embedding_init")]
    pub embedding_init: f64,
}

fn default_embedding_init() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

fn default_bptt() -> usize {
    70
}

fn yes() -> bool {
    true
}

impl AwdLstmConfig {
    /// Full-scale dimensions: 400-dim embeddings, 1152 hidden units, 3 layers, BPTT 70.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embedding_dim: 400,
            hidden_dim: 1152,
            n_layers: 3,
            base_dropouts: BaseDropouts::default(),
            dropout_multiplicity: 1.0,
            bptt: 70,
            tie_weights: true,
            embedding_init: 0.1,
        }
    }

    /// Small dimensions for tests and the bundled fixtures. The embedding
    /// bound is raised so a 16-dim row has the same expected norm as a
    /// full-scale one; at +-0.1 narrow models sit on the unigram plateau for
    /// hundreds of updates.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            embedding_dim: 16,
            hidden_dim: 32,
            n_layers: 2,
            bptt: 10,
            embedding_init: 0.5,
            ..Self::full_scale(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<(), UlmfitError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("bptt", self.bptt),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(UlmfitError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.embedding_init.is_finite() && self.embedding_init > 0.0) {
            return Err(UlmfitError::InvalidConfig("embedding_init must be positive".into()));
        }
        let b = &self.base_dropouts;
        for r in [b.embedding, b.input, b.weight, b.between, self.dropout_multiplicity] {
            if !r.is_finite() || r < 0.0 {
                return Err(UlmfitError::InvalidConfig(format!("dropout value {r} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn effective_dropout(&self, site: DropoutSite) -> f64 {
        scaled_rate(self.dropout_multiplicity, self.base_dropouts.get(site))
    }

    /// `(input, output)` width of each LSTM layer. With tied weights the last
    /// layer emits `embedding_dim` so its output can feed the tied decoder.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| {
                let input = if l == 0 { self.embedding_dim } else { self.hidden_dim };
                let output = if l + 1 == self.n_layers && self.tie_weights {
                    self.embedding_dim
                } else {
                    self.hidden_dim
                };
                (input, output)
            })
            .collect()
    }

    pub fn encoder_output_dim(&self) -> usize {
        self.layer_dims().last().map_or(self.embedding_dim, |d| d.1)
    }
}

/// Which parameters a training stage may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnfreezeScope {
    /// Classifier head, or the LM decoder.
    HeadOnly,
    /// The above plus the last LSTM layer (and the tied embedding for an LM).
    LastLayer,
    All,
}

impl std::str::FromStr for UnfreezeScope {
    type Err = UlmfitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head_only" => Ok(Self::HeadOnly),
            "last_layer" => Ok(Self::LastLayer),
            "all" => Ok(Self::All),
            _ => Err(UlmfitError::InvalidConfig(format!("unknown unfreeze scope {s:?}"))),
        }
    }
}

/// Whether parameter `name` is trainable under `scope`. For a language model
/// with tied weights the embedding doubles as the decoder, so it joins the
/// last-layer scope.
pub fn in_scope(name: &str, scope: UnfreezeScope, config: &AwdLstmConfig, is_lm: bool) -> bool {
    let last = format!("encoder.lstm.{}.", config.n_layers - 1);
    let head = name.starts_with("head.") || name.starts_with("decoder.");
    match scope {
        UnfreezeScope::All => true,
        UnfreezeScope::HeadOnly => head,
        UnfreezeScope::LastLayer => {
            head || name.starts_with(&last) || (is_lm && config.tie_weights && name == lm::EMBEDDING)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub scope: UnfreezeScope,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub stages: Vec<Stage>,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), UlmfitError> {
        if self.stages.is_empty() {
            return Err(UlmfitError::InvalidConfig("schedule has no stages".into()));
        }
        for s in &self.stages {
            if s.epochs == 0 || !(s.lr > 0.0) || s.batch_size == 0 {
                return Err(UlmfitError::InvalidConfig(format!(
                    "stage needs epochs >= 1, lr > 0 and batch_size >= 1: {s:?}"
                )));
            }
        }
        Ok(())
    }
}

/// One completed training stage, kept in checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub phase: String,
    pub scope: UnfreezeScope,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout_multiplicity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}
