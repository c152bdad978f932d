//! Training-level contracts of the language model and classifier.

mod common;

use codemix::fixtures;
use codemix::neural::{dropout_mask, embedding_dropout, locked_dropout, weight_drop, Mode, ParamStore, Tensor};
use codemix::rng::RngStream;
use codemix::textprep::{preprocess, split_train_valid};
use codemix::tokenizer::{train_unigram, viterbi_encode, TrainerOptions, UnigramVocab};
use codemix::ulmfit::{
    build_classifier, classifier_logits, finetune_lm, in_scope, lm_forward, new_lm, perplexity, predict,
    pretrain_lm, scaled_rate, train_classifier, AwdLstmConfig, BaseDropouts, ClassifierConfig,
    ClassifierTrainConfig, DropoutNoise, DropoutSite, HiddenState, LanguageModel, LmTrainConfig, Stage,
    TrainSchedule, UlmfitError, UnfreezeScope,
};
use common::fixture_synthetic;

const SITES: [DropoutSite; 4] = [DropoutSite::Embedding, DropoutSite::Input, DropoutSite::Weight, DropoutSite::Between];
const MILLION: usize = 1_000_000;

fn zero_fraction(xs: &[f64]) -> f64 {
    xs.iter().filter(|&&x| x == 0.0).count() as f64 / xs.len() as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stage(scope: UnfreezeScope, epochs: usize, lr: f64, batch_size: usize) -> Stage {
    Stage { scope, epochs, lr, batch_size }
}

fn one_stage(s: Stage, dropout_multiplicity: f64, valid_fraction: f64) -> LmTrainConfig {
    LmTrainConfig { schedule: TrainSchedule { stages: vec![s] }, dropout_multiplicity, valid_fraction }
}

/// Names of parameters that differ bitwise between two stores.
fn changed(a: &ParamStore, b: &ParamStore) -> Vec<String> {
    a.iter().zip(b.iter()).filter(|((_, x), (_, y))| !x.bit_eq(y)).map(|((n, _), _)| n.to_string()).collect()
}

fn small_corpus() -> (UnigramVocab, Vec<String>) {
    let lines: Vec<String> = fixture_synthetic().into_iter().take(1000).collect();
    let vocab = train_unigram(&lines, 150, &TrainerOptions::default()).unwrap();
    (vocab, lines)
}

fn small_lm(vocab: &UnigramVocab, lines: &[String], epochs: usize) -> LanguageModel {
    let cfg = one_stage(stage(UnfreezeScope::All, epochs, 1e-2, 16), 1.0, 0.2);
    pretrain_lm(AwdLstmConfig::toy(vocab.id_space()), vocab, lines, &cfg, 3).unwrap().0
}

// ---------------------------------------------------------------------------
// Dropout

#[test]
fn mask_densities_on_a_million_entries() {
    for (i, rate) in [0.02, 0.1, 0.2, 0.5].into_iter().enumerate() {
        let mut rng = RngStream::new(i as u64);
        let m = dropout_mask(MILLION, rate, &mut rng).unwrap();
        assert!((zero_fraction(&m) - rate).abs() < 0.02, "rate {rate}");
        assert!((mean(&m) - 1.0).abs() < 0.02);
        assert!(m.iter().all(|&x| x == 0.0 || x == 1.0 / (1.0 - rate)));
    }
}

#[test]
fn weight_drop_density_and_scaling() {
    let mut rng = RngStream::new(1);
    let w = Tensor::uniform(&[1000, 1000], 1.0, &mut rng);
    let d = weight_drop(&w, 0.5, &mut rng, Mode::Train).unwrap();
    assert!((zero_fraction(&d.data) - 0.5).abs() < 0.02);
    for (x, y) in w.data.iter().zip(&d.data) {
        assert!(*y == 0.0 || *y == 2.0 * x);
    }
    assert!(weight_drop(&w, 0.5, &mut rng, Mode::Eval).unwrap().bit_eq(&w));
}

#[test]
fn locked_dropout_shares_one_mask_over_time() {
    let (t, b, d) = (4, 500, 500);
    let seq = Tensor::filled(&[t, b, d], 1.0);
    let out = locked_dropout(&seq, 0.2, &mut RngStream::new(2), Mode::Train).unwrap();
    let step = b * d;
    for k in 1..t {
        assert_eq!(out.data[..step], out.data[k * step..(k + 1) * step]);
    }
    assert!((zero_fraction(&out.data[..step]) - 0.2).abs() < 0.02);
    assert!((mean(&out.data) - 1.0).abs() < 0.02);
}

#[test]
fn embedding_dropout_drops_whole_rows() {
    let table = Tensor::filled(&[MILLION, 2], 1.0);
    let out = embedding_dropout(&table, 0.02, &mut RngStream::new(3), Mode::Train).unwrap();
    let rows: Vec<f64> = out.data.chunks(2).map(|r| {
        assert_eq!(r[0], r[1]);
        r[0]
    }).collect();
    assert!((zero_fraction(&rows) - 0.02).abs() < 0.01);
    assert!((mean(&rows) - 1.0).abs() < 0.02);
}

#[test]
fn every_site_scales_with_the_multiplicity() {
    let base = BaseDropouts::default();
    for m in [0.0, 0.3, 0.5, 0.7, 1.0, 2.5, 10.0, 100.0] {
        let cfg = AwdLstmConfig { dropout_multiplicity: m, ..AwdLstmConfig::toy(10) };
        for site in SITES {
            assert_eq!(cfg.effective_dropout(site), (m * base.get(site)).clamp(0.0, 0.99));
        }
        assert_eq!(scaled_rate(m, 0.4), (m * 0.4).clamp(0.0, 0.99));
    }
}

#[test]
fn zero_multiplicity_makes_training_mode_exact_eval() {
    let (vocab, lines) = small_corpus();
    let mut lm = new_lm(AwdLstmConfig::toy(vocab.id_space()), 5).unwrap();
    lm.config.dropout_multiplicity = 0.0;
    let ids: Vec<Vec<u32>> = lines[..3].iter().map(|l| viterbi_encode(&vocab, l).ids).collect();
    let t = ids.iter().map(Vec::len).min().unwrap();
    let input: Vec<Vec<u32>> = (0..t).map(|i| ids.iter().map(|s| s[i]).collect()).collect();
    let h = HiddenState::zeros(&lm.config, 3);
    let (eval, _) = lm_forward(&lm, &input, &h, Mode::Eval, &mut DropoutNoise::new(1)).unwrap();
    let (train, _) = lm_forward(&lm, &input, &h, Mode::Train, &mut DropoutNoise::new(2)).unwrap();
    assert!(eval.bit_eq(&train));

    lm.vocab_fingerprint = vocab.fingerprint();
    let cls = build_classifier(&lm, &vocab, ClassifierConfig::default(), 1).unwrap();
    let logits = |noise: u64| {
        let mut g = codemix::neural::Graph::new();
        let mut bn = cls.bn.clone();
        let x = classifier_logits(
            &mut g, &lm.config, &cls.config, &cls.params, &mut bn, &|_| false, &ids, Mode::Train, &mut DropoutNoise::new(noise),
        )
        .unwrap();
        g.value(x).clone()
    };
    // Batch norm uses batch statistics in train mode, so the head is compared
    // across dropout streams rather than against eval mode.
    assert!(logits(9).bit_eq(&logits(10)));
}

// ---------------------------------------------------------------------------
// Language model

#[test]
fn uniform_logits_give_the_vocabulary_size() {
    let mut m = new_lm(AwdLstmConfig::toy(100), 1).unwrap();
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        m.params.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
    }
    let stream: Vec<u32> = (0..500).map(|i| (i * 37 % 100) as u32).collect();
    let p = perplexity(&m, &stream, 5, 20).unwrap();
    assert!((p - 100.0).abs() < 0.1, "{p}");
}

#[test]
fn memorises_a_repeated_sentence() {
    let lines = vec!["njan ee cinema kandu , nalla padam aanu".to_string(); 40];
    let vocab = train_unigram(&lines, 30, &TrainerOptions::default()).unwrap();
    let cfg = one_stage(stage(UnfreezeScope::All, 200, 1e-2, 4), 1.0, 0.0);
    let (m, log) = pretrain_lm(AwdLstmConfig::toy(vocab.id_space()), &vocab, &lines, &cfg, 1).unwrap();
    assert_eq!(log.len(), 200);
    let stream: Vec<u32> = lines.iter().flat_map(|l| viterbi_encode(&vocab, l).ids).collect();
    let p = perplexity(&m, &stream, 4, 10).unwrap();
    assert!(p < 1.5, "{p}");
}

#[test]
fn pretraining_improves_each_early_epoch_and_is_reproducible() {
    let (vocab, lines) = small_corpus();
    let cfg = one_stage(stage(UnfreezeScope::All, 5, 1e-2, 16), 1.0, 0.2);
    let run = || pretrain_lm(AwdLstmConfig::toy(vocab.id_space()), &vocab, &lines, &cfg, 3).unwrap();
    let (a, log) = run();
    for w in log.windows(2) {
        assert!(w[1].train_perplexity < w[0].train_perplexity, "{log:?}");
    }
    let (b, log_b) = run();
    assert_eq!(log, log_b);
    assert!(changed(&a.params, &b.params).is_empty());

    let tiny = vec!["njan".to_string()];
    assert!(matches!(
        pretrain_lm(AwdLstmConfig::toy(vocab.id_space()), &vocab, &tiny, &cfg, 3),
        Err(UlmfitError::StreamTooShort { .. })
    ));
}

#[test]
fn finetune_default_schedule() {
    let d = LmTrainConfig::finetune_default();
    assert_eq!(
        d.schedule.stages,
        [stage(UnfreezeScope::LastLayer, 1, 1e-2, 64), stage(UnfreezeScope::All, 5, 1e-3, 64)]
    );
    assert_eq!(d.dropout_multiplicity, 0.3);
}

#[test]
fn finetune_first_stage_freezes_all_but_the_last_layer() {
    let (vocab, lines) = small_corpus();
    let lm = small_lm(&vocab, &lines, 1);
    let mut cfg = LmTrainConfig::finetune_default();
    cfg.schedule.stages.truncate(1);
    let (tuned, _) = finetune_lm(lm.clone(), &vocab, &lines, &cfg, 4).unwrap();
    let moved = changed(&lm.params, &tuned.params);
    for (name, _) in lm.params.iter() {
        let trainable = in_scope(name, UnfreezeScope::LastLayer, &lm.config, true);
        assert_eq!(moved.contains(&name.to_string()), trainable, "{name}");
    }
    assert!(moved.iter().all(|n| !n.starts_with("encoder.lstm.0.")));

    let mut other = lm.clone();
    other.vocab_fingerprint = "0".repeat(64);
    assert!(matches!(finetune_lm(other, &vocab, &lines, &cfg, 4), Err(UlmfitError::FingerprintMismatch { .. })));
}

#[test]
fn finetuning_on_the_pretraining_corpus_is_stable() {
    let (vocab, lines) = small_corpus();
    let cfg = one_stage(stage(UnfreezeScope::All, 3, 1e-2, 16), 1.0, 0.2);
    let (lm, log) = pretrain_lm(AwdLstmConfig::toy(vocab.id_space()), &vocab, &lines, &cfg, 3).unwrap();
    let before = log.last().unwrap().valid_perplexity.unwrap();
    let (tuned, log) = finetune_lm(lm, &vocab, &lines, &LmTrainConfig::finetune_default(), 3).unwrap();
    let after = log.last().unwrap().valid_perplexity.unwrap();
    assert!(after <= 1.05 * before, "{before} -> {after}");
    let phases: Vec<_> = tuned.metadata.stages.iter().map(|s| (s.phase.as_str(), s.scope, s.epochs)).collect();
    assert_eq!(
        phases,
        [("pretrain", UnfreezeScope::All, 3), ("finetune", UnfreezeScope::LastLayer, 1), ("finetune", UnfreezeScope::All, 5)]
    );
}

#[test]
fn checkpoint_reload_gives_the_same_perplexity() {
    let (vocab, lines) = small_corpus();
    let lm = small_lm(&vocab, &lines, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.ckpt");
    lm.save(&path).unwrap();
    let back = LanguageModel::load(&path).unwrap();
    assert!(changed(&lm.params, &back.params).is_empty());
    let stream: Vec<u32> = lines[..200].iter().flat_map(|l| viterbi_encode(&vocab, l).ids).collect();
    let (a, b) = (perplexity(&lm, &stream, 8, 20).unwrap(), perplexity(&back, &stream, 8, 20).unwrap());
    assert_eq!(a.to_bits(), b.to_bits());
}

// ---------------------------------------------------------------------------
// Classifier

#[test]
fn classifier_stages_respect_their_scope() {
    let (vocab, lines) = small_corpus();
    let lm = small_lm(&vocab, &lines, 1);
    let data = fixtures::labeled_toy(120, 2);
    let (train, valid) = split_train_valid(&data, 0.2, 2).unwrap();
    let cls = build_classifier(&lm, &vocab, ClassifierConfig::default(), 2).unwrap();
    for scope in [UnfreezeScope::HeadOnly, UnfreezeScope::LastLayer] {
        let cfg = ClassifierTrainConfig {
            dropout_multiplicity: 0.5,
            schedule: TrainSchedule { stages: vec![stage(scope, 1, 1e-2, 16)] },
            select_best_epoch: false,
        };
        let (trained, _) = train_classifier(cls.clone(), &train, &valid, &cfg, 2).unwrap();
        let moved = changed(&cls.params, &trained.params);
        for (name, _) in cls.params.iter() {
            assert_eq!(moved.contains(&name.to_string()), in_scope(name, scope, &cls.lm_config, false), "{scope:?} {name}");
        }
    }
}

#[test]
fn predictions_are_deterministic_distributions() {
    let (vocab, lines) = small_corpus();
    let lm = small_lm(&vocab, &lines, 1);
    let cls = build_classifier(&lm, &vocab, ClassifierConfig::default(), 2).unwrap();
    for text in ["", "@someone https://x.y", "nee poda mandan", "ഇത് nalla cinema"] {
        let (label, probs) = predict(&cls, text).unwrap();
        assert_eq!(probs.len(), 2);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(predict(&cls, text).unwrap(), (label, probs));
        assert_eq!(predict(&cls, &preprocess(text)).unwrap().1, predict(&cls, text).unwrap().1);
    }
}
