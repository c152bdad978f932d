use std::collections::BTreeSet;
use std::rc::Rc;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::lm::{run_encoder, DropoutNoise, HiddenState, LanguageModel};
use super::{in_scope, scaled_rate, AwdLstmConfig, Stage, StageRecord, TrainSchedule, TrainingMetadata, UlmfitError, UnfreezeScope};
use crate::metrics::evaluate;
use crate::neural::{dropout_mask, softmax_rows, Adam, BatchNormStats, Gradients, Graph, Mode, NeuralError, ParamStore, Pooling, Tensor, Var};
use crate::rng::RngStream;
use crate::textprep::{preprocess, Label, LabeledExample};
use crate::tokenizer::{viterbi_encode, TokenId, UnigramVocab, PAD_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub head_hidden_dim: usize,
    /// Base rates before the first and second linear layer.
    pub head_dropouts: [f64; 2],
    pub n_classes: usize,
    pub pooling: Pooling,
    /// Sequences are cut to this many pieces.
    pub max_len: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            head_hidden_dim: 50,
            head_dropouts: [0.4, 0.1],
            n_classes: 2,
            pooling: Pooling::Concat,
            max_len: 512,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), UlmfitError> {
        if self.n_classes < 2 {
            return Err(UlmfitError::InvalidConfig("n_classes must be at least 2".into()));
        }
        if self.head_hidden_dim == 0 || self.max_len == 0 {
            return Err(UlmfitError::InvalidConfig("head_hidden_dim and max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_input_dim(&self, lm: &AwdLstmConfig) -> usize {
        match self.pooling {
            Pooling::Concat => 3 * lm.encoder_output_dim(),
            Pooling::Last => lm.encoder_output_dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub lm_config: AwdLstmConfig,
    pub config: ClassifierConfig,
    pub params: ParamStore,
    pub bn: [BatchNormStats; 2],
    pub vocab: UnigramVocab,
    pub metadata: TrainingMetadata,
}

fn head_init(store: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize, seed: u64) {
    let mut rng = RngStream::derived(seed, name);
    store.add(name, Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), &mut rng));
}

/// Encoder from a language model plus a freshly initialised head.
pub fn build_classifier(
    lm: &LanguageModel,
    vocab: &UnigramVocab,
    config: ClassifierConfig,
    seed: u64,
) -> Result<Classifier, UlmfitError> {
    config.validate()?;
    let found = vocab.fingerprint();
    if lm.vocab_fingerprint != found {
        return Err(UlmfitError::FingerprintMismatch {
            expected: lm.vocab_fingerprint.clone(),
            found,
        });
    }
    let mut params = ParamStore::new();
    for (name, t) in lm.params.iter() {
        if name.starts_with("encoder.") {
            params.add(name, t.clone());
        }
    }
    let width = config.head_input_dim(&lm.config);
    let hid = config.head_hidden_dim;
    params.add("head.bn1.gamma", Tensor::filled(&[width], 1.0));
    params.add("head.bn1.beta", Tensor::zeros(&[width]));
    head_init(&mut params, "head.linear1.weight", &[width, hid], width, seed);
    head_init(&mut params, "head.linear1.bias", &[hid], width, seed);
    params.add("head.bn2.gamma", Tensor::filled(&[hid], 1.0));
    params.add("head.bn2.beta", Tensor::zeros(&[hid]));
    head_init(&mut params, "head.linear2.weight", &[hid, config.n_classes], hid, seed);
    head_init(&mut params, "head.linear2.bias", &[config.n_classes], hid, seed);
    Ok(Classifier {
        lm_config: lm.config.clone(),
        bn: [BatchNormStats::new(width), BatchNormStats::new(hid)],
        config,
        params,
        vocab: vocab.clone(),
        metadata: TrainingMetadata {
            seed,
            stages: lm.metadata.stages.clone(),
        },
    })
}

impl Classifier {
    /// Preprocessed, encoded and truncated ids for `text`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = viterbi_encode(&self.vocab, &preprocess(text)).ids;
        ids.truncate(self.config.max_len);
        ids
    }
}

/// Logits `[batch, n_classes]` for pre-encoded sequences. Empty sequences are
/// read as a single pad token; pads never enter the pooled features.
#[allow(clippy::too_many_arguments)]
pub fn classifier_logits(
    g: &mut Graph,
    lm_config: &AwdLstmConfig,
    config: &ClassifierConfig,
    store: &ParamStore,
    bn: &mut [BatchNormStats; 2],
    trainable: &dyn Fn(&str) -> bool,
    batch: &[Vec<TokenId>],
    mode: Mode,
    noise: &mut DropoutNoise,
) -> Result<Var, UlmfitError> {
    let lengths: Vec<usize> = batch.iter().map(|s| s.len().clamp(1, config.max_len)).collect();
    let t_len = *lengths.iter().max().expect("non-empty batch");
    let inputs: Vec<Vec<TokenId>> = (0..t_len)
        .map(|t| batch.iter().map(|s| if t < s.len().min(config.max_len) { s[t] } else { PAD_ID }).collect())
        .collect();
    let hidden = HiddenState::zeros(lm_config, batch.len());
    let (outs, _, _) = run_encoder(g, store, lm_config, trainable, &inputs, &hidden, mode, noise)?;
    let pooled = g.pool(&outs, &lengths, config.pooling);

    let p = |g: &mut Graph, name: &str| {
        let id = store.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        g.param(store, id, trainable(name))
    };
    let mut x = pooled;
    for (i, bn_stats) in bn.iter_mut().enumerate() {
        let k = i + 1;
        let gamma = p(g, &format!("head.bn{k}.gamma"));
        let beta = p(g, &format!("head.bn{k}.beta"));
        x = g.batch_norm(x, gamma, beta, bn_stats, mode)?;
        let rate = match mode {
            Mode::Train => scaled_rate(lm_config.dropout_multiplicity, config.head_dropouts[i]),
            Mode::Eval => 0.0,
        };
        if rate > 0.0 {
            let mask = dropout_mask(g.value(x).len(), rate, &mut noise.head)?;
            x = g.scale(x, Rc::new(mask));
        }
        let w = p(g, &format!("head.linear{k}.weight"));
        let b = p(g, &format!("head.linear{k}.bias"));
        x = g.linear(x, w, b);
        if k == 1 {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Mean cross-entropy of a labelled batch, with gradients for `scope` when asked.
#[allow(clippy::too_many_arguments)]
pub fn classifier_loss(
    cls: &Classifier,
    params: &ParamStore,
    bn: &mut [BatchNormStats; 2],
    batch: &[Vec<TokenId>],
    targets: &[usize],
    mode: Mode,
    noise: &mut DropoutNoise,
    scope: UnfreezeScope,
    need_grad: bool,
) -> Result<(f64, Gradients), UlmfitError> {
    let mut g = Graph::new();
    let trainable = |name: &str| need_grad && in_scope(name, scope, &cls.lm_config, false);
    let logits = classifier_logits(&mut g, &cls.lm_config, &cls.config, params, bn, &trainable, batch, mode, noise)?;
    let loss = g.softmax_cross_entropy(logits, targets)?;
    let value = g.value(loss).data[0];
    let grads = if need_grad { g.backward(loss, params.len()) } else { Vec::new() };
    Ok((value, grads))
}

/// Class probabilities for encoded sequences, eval mode.
pub fn predict_ids(cls: &Classifier, batch: &[Vec<TokenId>]) -> Result<Tensor, UlmfitError> {
    let mut g = Graph::new();
    let mut bn = cls.bn.clone();
    let logits = classifier_logits(
        &mut g,
        &cls.lm_config,
        &cls.config,
        &cls.params,
        &mut bn,
        &|_| false,
        batch,
        Mode::Eval,
        &mut DropoutNoise::new(0),
    )?;
    Ok(softmax_rows(g.value(logits)))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// Label and class probabilities (indexed by [`Label::index`]).
pub fn predict(cls: &Classifier, text: &str) -> Result<(Label, Vec<f64>), UlmfitError> {
    let probs = predict_ids(cls, &[cls.encode(text)])?;
    let label = Label::from_index(argmax(&probs.data)).expect("two-class head");
    Ok((label, probs.data))
}

/// Labels for many texts, evaluated in chunks.
pub fn predict_many(cls: &Classifier, texts: &[&str]) -> Result<Vec<(Label, Vec<f64>)>, UlmfitError> {
    let encoded: Vec<Vec<TokenId>> = texts.iter().map(|t| cls.encode(t)).collect();
    let mut out = Vec::with_capacity(texts.len());
    for chunk in encoded.chunks(64) {
        let probs = predict_ids(cls, chunk)?;
        for i in 0..chunk.len() {
            let row = probs.row(i).to_vec();
            out.push((Label::from_index(argmax(&row)).expect("two-class head"), row));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub dropout_multiplicity: f64,
    pub schedule: TrainSchedule,
    /// Keep the parameters of the epoch with the best validation weighted F1.
    pub select_best_epoch: bool,
}

impl ClassifierTrainConfig {
    /// Gradual unfreezing: head, then the last LSTM layer, then everything for
    /// 5 epochs at 1e-3. The first two stages are reconstructions.
    pub fn with_multiplicity(dropout_multiplicity: f64, batch_size: usize) -> Self {
        let stage = |scope, epochs, lr| Stage { scope, epochs, lr, batch_size };
        Self {
            dropout_multiplicity,
            schedule: TrainSchedule {
                stages: vec![
                    stage(UnfreezeScope::HeadOnly, 1, 2e-2),
                    stage(UnfreezeScope::LastLayer, 2, 1e-2),
                    stage(UnfreezeScope::All, 5, 1e-3),
                ],
            },
            select_best_epoch: true,
        }
    }
}

/// Named classifier hyperparameters for the three HASOC Dravidian datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierPreset {
    /// Malayalam comments in mixed (native and Roman) script.
    MalayalamMixedScript,
    /// Malayalam comments in Roman script.
    Malayalam,
    /// Tamil comments in Roman script.
    Tamil,
}

impl ClassifierPreset {
    pub const ALL: [ClassifierPreset; 3] = [Self::MalayalamMixedScript, Self::Malayalam, Self::Tamil];

    pub fn name(self) -> &'static str {
        match self {
            Self::MalayalamMixedScript => "malayalam-mixed",
            Self::Malayalam => "malayalam",
            Self::Tamil => "tamil",
        }
    }

    pub fn dropout_multiplicity(self) -> f64 {
        match self {
            Self::MalayalamMixedScript => 0.5,
            Self::Malayalam => 0.7,
            Self::Tamil => 0.5,
        }
    }

    pub fn config(self) -> ClassifierTrainConfig {
        ClassifierTrainConfig::with_multiplicity(self.dropout_multiplicity(), 16)
    }
}

impl FromStr for ClassifierPreset {
    type Err = UlmfitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UlmfitError::InvalidConfig(format!("unknown classifier preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpochLog {
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_weighted_f1: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

/// Shuffled batches; a trailing batch of one is merged into the previous one
/// because batch normalisation needs at least two rows.
fn make_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(2)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

fn score(cls: &Classifier, encoded: &[Vec<TokenId>], golds: &[Label]) -> Result<(f64, f64), UlmfitError> {
    let mut preds = Vec::with_capacity(encoded.len());
    for chunk in encoded.chunks(64) {
        let probs = predict_ids(cls, chunk)?;
        for i in 0..chunk.len() {
            preds.push(Label::from_index(argmax(probs.row(i))).expect("two-class head"));
        }
    }
    let report = evaluate(golds, &preds).expect("non-empty, equal lengths");
    Ok((report.weighted_f1, report.accuracy))
}

/// Gradual-unfreezing training. Returns the trained classifier and one log
/// entry per epoch.
pub fn train_classifier(
    mut cls: Classifier,
    train: &[LabeledExample],
    valid: &[LabeledExample],
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<(Classifier, Vec<ClassifierEpochLog>), UlmfitError> {
    cfg.schedule.validate()?;
    let classes: BTreeSet<Label> = train.iter().map(|e| e.label).collect();
    if classes.len() < 2 {
        return Err(UlmfitError::SingleClassTrainSet);
    }
    if train.len() < 2 {
        return Err(NeuralError::BatchTooSmall(1).into());
    }
    cls.lm_config.dropout_multiplicity = cfg.dropout_multiplicity;
    let train_ids: Vec<Vec<TokenId>> = train.iter().map(|e| cls.encode(&e.text)).collect();
    let train_y: Vec<usize> = train.iter().map(|e| e.label.index()).collect();
    let valid_ids: Vec<Vec<TokenId>> = valid.iter().map(|e| cls.encode(&e.text)).collect();
    let valid_y: Vec<Label> = valid.iter().map(|e| e.label).collect();

    let mut adam = Adam::new();
    let mut noise = DropoutNoise::new(RngStream::derived(seed, "classifier").next_u64());
    let mut order_rng = RngStream::derived(seed, "classifier.order");
    let mut best: Option<(f64, ParamStore, [BatchNormStats; 2])> = None;
    let mut log = Vec::new();
    for (si, stage) in cfg.schedule.stages.iter().enumerate() {
        for epoch in 0..stage.epochs {
            let (mut total, mut count) = (0.0, 0usize);
            for batch in make_batches(train_ids.len(), stage.batch_size, &mut order_rng) {
                let seqs: Vec<Vec<TokenId>> = batch.iter().map(|&i| train_ids[i].clone()).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
                let mut bn = cls.bn.clone();
                let (loss, grads) = classifier_loss(&cls, &cls.params, &mut bn, &seqs, &ys, Mode::Train, &mut noise, stage.scope, true)?;
                cls.bn = bn;
                adam.step(&mut cls.params, &grads, stage.lr);
                total += loss * ys.len() as f64;
                count += ys.len();
            }
            let (f1, acc) = if valid.is_empty() {
                (None, None)
            } else {
                let (f, a) = score(&cls, &valid_ids, &valid_y)?;
                (Some(f), Some(a))
            };
            info!(
                "classifier stage {} epoch {}: train loss {:.4}, valid weighted F1 {}",
                si + 1,
                epoch + 1,
                total / count as f64,
                f1.map_or("n/a".to_string(), |f| format!("{f:.4}"))
            );
            if cfg.select_best_epoch {
                if let Some(f) = f1 {
                    if best.as_ref().is_none_or(|b| f > b.0) {
                        best = Some((f, cls.params.clone(), cls.bn.clone()));
                    }
                }
            }
            log.push(ClassifierEpochLog {
                stage: si,
                epoch,
                train_loss: total / count as f64,
                valid_weighted_f1: f1,
                valid_accuracy: acc,
            });
        }
        cls.metadata.stages.push(StageRecord {
            phase: "classifier".into(),
            scope: stage.scope,
            epochs: stage.epochs,
            lr: stage.lr,
            batch_size: stage.batch_size,
            dropout_multiplicity: cfg.dropout_multiplicity,
        });
    }
    if let Some((_, params, bn)) = best {
        cls.params = params;
        cls.bn = bn;
    }
    Ok((cls, log))
}
