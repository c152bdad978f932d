use std::rc::Rc;

use log::info;
use serde::{Deserialize, Serialize};

use super::{in_scope, AwdLstmConfig, DropoutSite, Stage, StageRecord, TrainSchedule, TrainingMetadata, UlmfitError, UnfreezeScope};
use crate::neural::{dropout_mask, Adam, Gradients, Graph, Mode, ParamStore, Tensor, Var};
use crate::rng::RngStream;
use crate::tokenizer::{viterbi_encode, TokenId, UnigramVocab};

pub(crate) const EMBEDDING: &str = "encoder.embedding";
pub(crate) const DECODER_WEIGHT: &str = "decoder.weight";
pub(crate) const DECODER_BIAS: &str = "decoder.bias";

pub(crate) fn lstm_name(layer: usize, part: &str) -> String {
    format!("encoder.lstm.{layer}.{part}")
}

#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub config: AwdLstmConfig,
    pub params: ParamStore,
    /// Fingerprint of the tokenizer vocabulary the ids come from; empty for
    /// an untrained model.
    pub vocab_fingerprint: String,
    pub metadata: TrainingMetadata,
}

/// Adds embedding and LSTM parameters. Each tensor draws from its own stream
/// so adding a parameter never shifts the others.
pub(crate) fn init_encoder(store: &mut ParamStore, config: &AwdLstmConfig, seed: u64) {
    let mut rng = RngStream::derived(seed, EMBEDDING);
    store.add(EMBEDDING, Tensor::uniform(&[config.vocab_size, config.embedding_dim], config.embedding_init, &mut rng));
    for (l, (input, output)) in config.layer_dims().into_iter().enumerate() {
        // Uniform in +-1/sqrt(fan_in); the bias uses the recurrent fan-in.
        for (part, shape, fan_in) in [
            ("w_ih", vec![input, 4 * output], input),
            ("w_hh", vec![output, 4 * output], output),
            ("bias", vec![4 * output], output),
        ] {
            let name = lstm_name(l, part);
            let mut rng = RngStream::derived(seed, &name);
            store.add(name, Tensor::uniform(&shape, 1.0 / (fan_in as f64).sqrt(), &mut rng));
        }
    }
}

pub fn new_lm(config: AwdLstmConfig, seed: u64) -> Result<LanguageModel, UlmfitError> {
    config.validate()?;
    let mut params = ParamStore::new();
    init_encoder(&mut params, &config, seed);
    if !config.tie_weights {
        let mut rng = RngStream::derived(seed, DECODER_WEIGHT);
        params.add(
            DECODER_WEIGHT,
            Tensor::uniform(&[config.vocab_size, config.encoder_output_dim()], 0.1, &mut rng),
        );
    }
    params.add(DECODER_BIAS, Tensor::zeros(&[config.vocab_size]));
    Ok(LanguageModel {
        config,
        params,
        vocab_fingerprint: String::new(),
        metadata: TrainingMetadata { seed, stages: Vec::new() },
    })
}

/// Per-layer `(h, c)`, each `[batch, layer_output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl HiddenState {
    pub fn zeros(config: &AwdLstmConfig, batch: usize) -> Self {
        Self {
            layers: config
                .layer_dims()
                .iter()
                .map(|&(_, o)| (Tensor::zeros(&[batch, o]), Tensor::zeros(&[batch, o])))
                .collect(),
        }
    }
}

/// One random stream per dropout site.
#[derive(Debug, Clone)]
pub struct DropoutNoise {
    embedding: RngStream,
    input: RngStream,
    weight: RngStream,
    between: RngStream,
    pub(crate) head: RngStream,
}

impl DropoutNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            embedding: RngStream::derived(seed, "dropout.embedding"),
            input: RngStream::derived(seed, "dropout.input"),
            weight: RngStream::derived(seed, "dropout.weight"),
            between: RngStream::derived(seed, "dropout.between"),
            head: RngStream::derived(seed, "dropout.head"),
        }
    }
}

fn active_rate(config: &AwdLstmConfig, site: DropoutSite, mode: Mode) -> f64 {
    match mode {
        Mode::Eval => 0.0,
        Mode::Train => config.effective_dropout(site),
    }
}

/// Runs the encoder over `inputs[t][b]`. Returns the last layer's output
/// per timestep, the final hidden state, and the embedding node.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_encoder(
    g: &mut Graph,
    store: &ParamStore,
    config: &AwdLstmConfig,
    trainable: &dyn Fn(&str) -> bool,
    inputs: &[Vec<TokenId>],
    hidden: &HiddenState,
    mode: Mode,
    noise: &mut DropoutNoise,
) -> Result<(Vec<Var>, HiddenState, Var), UlmfitError> {
    let t_len = inputs.len();
    if t_len == 0 {
        return Err(UlmfitError::InvalidConfig("empty input window".into()));
    }
    let batch = inputs[0].len();
    let mut ids = Vec::with_capacity(t_len * batch);
    for step in inputs {
        if step.len() != batch {
            return Err(UlmfitError::InvalidConfig("ragged input window".into()));
        }
        for &id in step {
            if id as usize >= config.vocab_size {
                return Err(UlmfitError::IdOutOfRange { id, vocab: config.vocab_size });
            }
            ids.push(id as usize);
        }
    }
    let param = |g: &mut Graph, name: &str| {
        let id = store.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        g.param(store, id, trainable(name))
    };

    let emb = param(g, EMBEDDING);
    let e = config.embedding_dim;
    let mut x = g.gather(emb, &ids);
    let rate = active_rate(config, DropoutSite::Embedding, mode);
    if rate > 0.0 {
        let rows = dropout_mask(config.vocab_size, rate, &mut noise.embedding)?;
        let mask: Vec<f64> = ids.iter().flat_map(|&i| std::iter::repeat_n(rows[i], e)).collect();
        x = g.scale(x, Rc::new(mask));
    }
    let rate = active_rate(config, DropoutSite::Input, mode);
    if rate > 0.0 {
        let step = dropout_mask(batch * e, rate, &mut noise.input)?;
        let mask: Vec<f64> = step.iter().copied().cycle().take(t_len * batch * e).collect();
        x = g.scale(x, Rc::new(mask));
    }
    let mut seq: Vec<Var> = (0..t_len).map(|t| g.slice_rows(x, t * batch, batch)).collect();

    let dims = config.layer_dims();
    let mut next_hidden = Vec::with_capacity(dims.len());
    for (l, &(_, out)) in dims.iter().enumerate() {
        let w_ih = param(g, &lstm_name(l, "w_ih"));
        let mut w_hh = param(g, &lstm_name(l, "w_hh"));
        let bias = param(g, &lstm_name(l, "bias"));
        let rate = active_rate(config, DropoutSite::Weight, mode);
        if rate > 0.0 {
            let mask = dropout_mask(out * 4 * out, rate, &mut noise.weight)?;
            w_hh = g.scale(w_hh, Rc::new(mask));
        }
        let (h0, c0) = &hidden.layers[l];
        if h0.shape != [batch, out] {
            return Err(UlmfitError::InvalidConfig(format!(
                "hidden state for layer {l} has shape {:?}, expected [{batch}, {out}]",
                h0.shape
            )));
        }
        let mut h = g.constant(h0.clone());
        let mut c = g.constant(c0.clone());
        let mut outs = Vec::with_capacity(t_len);
        for &xt in &seq {
            let (h2, c2) = g.lstm_cell(xt, h, c, w_ih, w_hh, bias);
            h = h2;
            c = c2;
            outs.push(h);
        }
        next_hidden.push((g.value(h).clone(), g.value(c).clone()));
        let rate = active_rate(config, DropoutSite::Between, mode);
        if l + 1 < dims.len() && rate > 0.0 {
            let mask = Rc::new(dropout_mask(batch * out, rate, &mut noise.between)?);
            outs = outs.into_iter().map(|o| g.scale(o, Rc::clone(&mask))).collect();
        }
        seq = outs;
    }
    Ok((seq, HiddenState { layers: next_hidden }, emb))
}

/// Builds the LM graph; returns logits `[time*batch, vocab]` (time-major).
fn lm_graph(
    g: &mut Graph,
    config: &AwdLstmConfig,
    store: &ParamStore,
    trainable: &dyn Fn(&str) -> bool,
    inputs: &[Vec<TokenId>],
    hidden: &HiddenState,
    mode: Mode,
    noise: &mut DropoutNoise,
) -> Result<(Var, HiddenState), UlmfitError> {
    let (outs, next, emb) = run_encoder(g, store, config, trainable, inputs, hidden, mode, noise)?;
    let stacked = g.concat_rows(&outs);
    let weight = if config.tie_weights {
        emb
    } else {
        let id = store.id(DECODER_WEIGHT).expect("untied decoder weight");
        g.param(store, id, trainable(DECODER_WEIGHT))
    };
    let bias_id = store.id(DECODER_BIAS).expect("decoder bias");
    let bias = g.param(store, bias_id, trainable(DECODER_BIAS));
    let logits = g.matmul_t(stacked, weight);
    Ok((g.add_row(logits, bias), next))
}

/// Forward pass over one window `input[t][b]`. Logits are `[time, batch, vocab]`.
pub fn lm_forward(
    model: &LanguageModel,
    input: &[Vec<TokenId>],
    hidden: &HiddenState,
    mode: Mode,
    noise: &mut DropoutNoise,
) -> Result<(Tensor, HiddenState), UlmfitError> {
    let mut g = Graph::new();
    let (logits, next) = lm_graph(&mut g, &model.config, &model.params, &|_| false, input, hidden, mode, noise)?;
    let mut out = g.value(logits).clone();
    out.shape = vec![input.len(), input[0].len(), model.config.vocab_size];
    Ok((out, next))
}

/// Mean cross-entropy of one window plus, when `need_grad`, gradients for
/// the parameters in `scope`.
#[allow(clippy::too_many_arguments)]
pub fn lm_loss(
    config: &AwdLstmConfig,
    params: &ParamStore,
    window: &BpttWindow,
    hidden: &HiddenState,
    mode: Mode,
    noise: &mut DropoutNoise,
    scope: UnfreezeScope,
    need_grad: bool,
) -> Result<(f64, Gradients, HiddenState), UlmfitError> {
    let mut g = Graph::new();
    let trainable = |name: &str| need_grad && in_scope(name, scope, config, true);
    let (logits, next) = lm_graph(&mut g, config, params, &trainable, &window.inputs, hidden, mode, noise)?;
    let targets: Vec<usize> = window.targets.iter().flatten().map(|&t| t as usize).collect();
    if let Some(&bad) = targets.iter().find(|&&t| t >= config.vocab_size) {
        return Err(UlmfitError::IdOutOfRange { id: bad as TokenId, vocab: config.vocab_size });
    }
    let loss = g.softmax_cross_entropy(logits, &targets)?;
    let value = g.value(loss).data[0];
    let grads = if need_grad { g.backward(loss, params.len()) } else { Vec::new() };
    Ok((value, grads, next))
}

/// One BPTT window; `inputs[t][b]`, `targets[t][b] = inputs[t+1][b]` in the lane.
#[derive(Debug, Clone, PartialEq)]
pub struct BpttWindow {
    pub inputs: Vec<Vec<TokenId>>,
    pub targets: Vec<Vec<TokenId>>,
}

impl BpttWindow {
    pub fn n_tokens(&self) -> usize {
        self.targets.len() * self.targets.first().map_or(0, Vec::len)
    }
}

/// Splits `stream` into `batch_size` contiguous lanes (the remainder is
/// dropped) and cuts them into windows of up to `bptt` steps.
pub fn bptt_batches(stream: &[TokenId], batch_size: usize, bptt: usize) -> Result<Vec<BpttWindow>, UlmfitError> {
    if batch_size == 0 || bptt == 0 {
        return Err(UlmfitError::InvalidConfig("batch_size and bptt must be at least 1".into()));
    }
    let needed = batch_size * 2;
    if stream.len() < needed {
        return Err(UlmfitError::StreamTooShort { len: stream.len(), needed });
    }
    let lane_len = stream.len() / batch_size;
    let lanes: Vec<&[TokenId]> = (0..batch_size).map(|b| &stream[b * lane_len..(b + 1) * lane_len]).collect();
    let mut windows = Vec::new();
    let mut start = 0;
    while start + 1 < lane_len {
        let steps = bptt.min(lane_len - 1 - start);
        let inputs = (0..steps).map(|t| lanes.iter().map(|l| l[start + t]).collect()).collect();
        let targets = (0..steps).map(|t| lanes.iter().map(|l| l[start + t + 1]).collect()).collect();
        windows.push(BpttWindow { inputs, targets });
        start += steps;
    }
    Ok(windows)
}

/// `exp(mean token NLL)` in eval mode with the hidden state carried across windows.
pub fn perplexity(model: &LanguageModel, stream: &[TokenId], batch_size: usize, bptt: usize) -> Result<f64, UlmfitError> {
    let windows = bptt_batches(stream, batch_size, bptt)?;
    let mut hidden = HiddenState::zeros(&model.config, batch_size);
    let mut noise = DropoutNoise::new(0);
    let (mut total, mut count) = (0.0, 0usize);
    for w in &windows {
        let (loss, _, next) = lm_loss(&model.config, &model.params, w, &hidden, Mode::Eval, &mut noise, UnfreezeScope::All, false)?;
        let n = w.n_tokens();
        total += loss * n as f64;
        count += n;
        hidden = next;
    }
    Ok((total / count as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmTrainConfig {
    pub schedule: TrainSchedule,
    pub dropout_multiplicity: f64,
    /// Held-out fraction of lines used for validation perplexity.
    pub valid_fraction: f64,
}

impl LmTrainConfig {
    /// Single all-layers stage. Not fixed by the method description; chosen
    /// for the desk-scale fixtures.
    pub fn pretrain_default() -> Self {
        Self {
            schedule: TrainSchedule {
                stages: vec![Stage {
                    scope: UnfreezeScope::All,
                    epochs: 10,
                    lr: 1e-2,
                    batch_size: 16,
                }],
            },
            dropout_multiplicity: 1.0,
            valid_fraction: 0.2,
        }
    }

    /// Last layer for 1 epoch at 1e-2, then everything for 5 epochs at 1e-3;
    /// dropout multiplicity 0.3, batch size 64.
    pub fn finetune_default() -> Self {
        Self {
            schedule: TrainSchedule {
                stages: vec![
                    Stage {
                        scope: UnfreezeScope::LastLayer,
                        epochs: 1,
                        lr: 1e-2,
                        batch_size: 64,
                    },
                    Stage {
                        scope: UnfreezeScope::All,
                        epochs: 5,
                        lr: 1e-3,
                        batch_size: 64,
                    },
                ],
            },
            dropout_multiplicity: 0.3,
            valid_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), UlmfitError> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(UlmfitError::InvalidConfig(format!(
                "valid_fraction {} outside [0, 1)",
                self.valid_fraction
            )));
        }
        if !self.dropout_multiplicity.is_finite() || self.dropout_multiplicity < 0.0 {
            return Err(UlmfitError::InvalidConfig("dropout_multiplicity must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEpochLog {
    pub phase: String,
    pub stage: usize,
    pub epoch: usize,
    /// `exp` of the mean training loss over the epoch (train mode).
    pub train_perplexity: f64,
    pub valid_perplexity: Option<f64>,
}

fn encode_lines<S: AsRef<str>>(vocab: &UnigramVocab, lines: &[S]) -> Vec<Vec<TokenId>> {
    lines.iter().map(|l| viterbi_encode(vocab, l.as_ref()).ids).collect()
}

/// Seeded line-level split into (train, valid) id sequences.
fn split_lines(encoded: Vec<Vec<TokenId>>, valid_fraction: f64, seed: u64) -> (Vec<Vec<TokenId>>, Vec<Vec<TokenId>>) {
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    RngStream::derived(seed, "lm.split").shuffle(&mut order);
    let n_valid = (encoded.len() as f64 * valid_fraction).round() as usize;
    let mut valid_mask = vec![false; encoded.len()];
    for &i in &order[..n_valid] {
        valid_mask[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (ids, v) in encoded.into_iter().zip(valid_mask) {
        if v {
            valid.push(ids);
        } else {
            train.push(ids);
        }
    }
    (train, valid)
}

/// Largest batch that still gives two tokens per lane.
fn eval_batch(len: usize, preferred: usize) -> Option<usize> {
    let b = preferred.min(len / 2);
    (b >= 1).then_some(b)
}

fn train_lm_stages(
    model: &mut LanguageModel,
    vocab: &UnigramVocab,
    lines: &[String],
    cfg: &LmTrainConfig,
    seed: u64,
    phase: &str,
) -> Result<Vec<LmEpochLog>, UlmfitError> {
    cfg.validate()?;
    if model.config.vocab_size != vocab.id_space() {
        return Err(UlmfitError::InvalidConfig(format!(
            "model vocab_size {} does not match tokenizer id space {}",
            model.config.vocab_size,
            vocab.id_space()
        )));
    }
    model.config.dropout_multiplicity = cfg.dropout_multiplicity;
    let (train_lines, valid_lines) = split_lines(encode_lines(vocab, lines), cfg.valid_fraction, seed);
    let valid_stream: Vec<TokenId> = valid_lines.concat();
    let min_batch = cfg.schedule.stages.iter().map(|s| s.batch_size).max().unwrap_or(1);
    let train_len: usize = train_lines.iter().map(Vec::len).sum();
    if train_len < 2 * min_batch {
        return Err(UlmfitError::StreamTooShort { len: train_len, needed: 2 * min_batch });
    }

    let mut adam = Adam::new();
    let mut noise = DropoutNoise::new(RngStream::derived(seed, phase).next_u64());
    let mut shuffle_rng = RngStream::derived(seed, &format!("{phase}.order"));
    let mut log = Vec::new();
    for (si, stage) in cfg.schedule.stages.iter().enumerate() {
        for epoch in 0..stage.epochs {
            let mut order: Vec<usize> = (0..train_lines.len()).collect();
            shuffle_rng.shuffle(&mut order);
            let stream: Vec<TokenId> = order.iter().flat_map(|&i| train_lines[i].iter().copied()).collect();
            let windows = bptt_batches(&stream, stage.batch_size, model.config.bptt)?;
            let mut hidden = HiddenState::zeros(&model.config, stage.batch_size);
            let (mut total, mut count) = (0.0, 0usize);
            for w in &windows {
                let (loss, grads, next) = lm_loss(
                    &model.config,
                    &model.params,
                    w,
                    &hidden,
                    Mode::Train,
                    &mut noise,
                    stage.scope,
                    true,
                )?;
                adam.step(&mut model.params, &grads, stage.lr);
                hidden = next;
                total += loss * w.n_tokens() as f64;
                count += w.n_tokens();
            }
            let train_perplexity = (total / count as f64).exp();
            let valid_perplexity = match eval_batch(valid_stream.len(), stage.batch_size) {
                Some(b) => Some(perplexity(model, &valid_stream, b, model.config.bptt)?),
                None => None,
            };
            info!(
                "{phase} stage {} epoch {}: train ppl {:.3}, valid ppl {}",
                si + 1,
                epoch + 1,
                train_perplexity,
                valid_perplexity.map_or("n/a".to_string(), |p| format!("{p:.3}"))
            );
            log.push(LmEpochLog {
                phase: phase.to_string(),
                stage: si,
                epoch,
                train_perplexity,
                valid_perplexity,
            });
        }
        model.metadata.stages.push(StageRecord {
            phase: phase.to_string(),
            scope: stage.scope,
            epochs: stage.epochs,
            lr: stage.lr,
            batch_size: stage.batch_size,
            dropout_multiplicity: cfg.dropout_multiplicity,
        });
    }
    Ok(log)
}

/// Trains a fresh model on `lines` (e.g. a synthesized corpus).
pub fn pretrain_lm(
    config: AwdLstmConfig,
    vocab: &UnigramVocab,
    lines: &[String],
    cfg: &LmTrainConfig,
    seed: u64,
) -> Result<(LanguageModel, Vec<LmEpochLog>), UlmfitError> {
    let mut model = new_lm(config, seed)?;
    model.vocab_fingerprint = vocab.fingerprint();
    let log = train_lm_stages(&mut model, vocab, lines, cfg, seed, "pretrain")?;
    Ok((model, log))
}

/// Continues training on the target-domain corpus.
pub fn finetune_lm(
    mut model: LanguageModel,
    vocab: &UnigramVocab,
    lines: &[String],
    cfg: &LmTrainConfig,
    seed: u64,
) -> Result<(LanguageModel, Vec<LmEpochLog>), UlmfitError> {
    let found = vocab.fingerprint();
    if model.vocab_fingerprint != found {
        return Err(UlmfitError::FingerprintMismatch {
            expected: model.vocab_fingerprint.clone(),
            found,
        });
    }
    let log = train_lm_stages(&mut model, vocab, lines, cfg, seed, "finetune")?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bptt_hand_layout() {
        let stream: Vec<TokenId> = (0..20).collect();
        let w = bptt_batches(&stream, 2, 3).unwrap();
        assert_eq!(w[0].inputs, vec![vec![0, 10], vec![1, 11], vec![2, 12]]);
        assert_eq!(w[0].targets, vec![vec![1, 11], vec![2, 12], vec![3, 13]]);
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].inputs.len(), 3);
    }

    #[test]
    fn bptt_single_window_and_reconstruction() {
        let stream: Vec<TokenId> = (0..21).collect();
        let w = bptt_batches(&stream, 3, 50).unwrap();
        assert_eq!(w.len(), 1);
        let w = bptt_batches(&stream, 3, 4).unwrap();
        for b in 0..3 {
            let lane: Vec<TokenId> = w.iter().flat_map(|x| x.inputs.iter().map(move |s| s[b])).collect();
            assert_eq!(lane, stream[b * 7..b * 7 + 6].to_vec());
        }
        assert!(matches!(
            bptt_batches(&stream[..5], 3, 4),
            Err(UlmfitError::StreamTooShort { len: 5, needed: 6 })
        ));
    }

    #[test]
    fn new_lm_shapes_and_determinism() {
        let m = new_lm(AwdLstmConfig::full_scale(1000), 1).unwrap();
        assert_eq!(m.params.by_name(EMBEDDING).unwrap().shape, vec![1000, 400]);
        assert_eq!(m.params.by_name("encoder.lstm.0.w_ih").unwrap().shape, vec![400, 4 * 1152]);
        assert_eq!(m.params.by_name("encoder.lstm.1.w_hh").unwrap().shape, vec![1152, 4 * 1152]);
        assert_eq!(m.params.by_name("encoder.lstm.2.w_ih").unwrap().shape, vec![1152, 4 * 400]);
        assert_eq!(m.params.by_name(DECODER_BIAS).unwrap().shape, vec![1000]);
        assert!(m.params.by_name(DECODER_WEIGHT).is_none());

        let a = new_lm(AwdLstmConfig::toy(50), 9).unwrap();
        let b = new_lm(AwdLstmConfig::toy(50), 9).unwrap();
        for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            assert!(x.bit_eq(y));
        }
    }

    #[test]
    fn forward_shape_and_multiplicity_zero() {
        let mut cfg = AwdLstmConfig::toy(30);
        cfg.dropout_multiplicity = 0.0;
        let m = new_lm(cfg, 3).unwrap();
        let input = vec![vec![1, 2], vec![3, 4], vec![5, 29]];
        let h = HiddenState::zeros(&m.config, 2);
        let (eval, he) = lm_forward(&m, &input, &h, Mode::Eval, &mut DropoutNoise::new(1)).unwrap();
        let (train, ht) = lm_forward(&m, &input, &h, Mode::Train, &mut DropoutNoise::new(2)).unwrap();
        assert_eq!(eval.shape, vec![3, 2, 30]);
        assert!(eval.bit_eq(&train));
        assert_eq!(he, ht);
        assert!(matches!(
            lm_forward(&m, &[vec![30, 1]], &h, Mode::Eval, &mut DropoutNoise::new(1)),
            Err(UlmfitError::IdOutOfRange { id: 30, vocab: 30 })
        ));
    }

    #[test]
    fn uniform_logits_give_vocab_perplexity() {
        let mut m = new_lm(AwdLstmConfig::toy(100), 1).unwrap();
        let id = m.params.id(EMBEDDING).unwrap();
        m.params.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        let stream: Vec<TokenId> = (0..200).map(|i| (i * 7 % 100) as TokenId).collect();
        let p = perplexity(&m, &stream, 4, 10).unwrap();
        assert!((p - 100.0).abs() < 1e-9, "{p}");
    }
}
