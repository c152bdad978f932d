//! Whole-model finite-difference checks at toy size.
//!
//! Parameters are redrawn uniformly in +-0.5 before checking. At the default
//! initialisation many gradients sit near 1e-10, below what a difference
//! quotient of a loss near 4 can resolve in f64, so a check there measures
//! round-off rather than the backward pass.

use codemix::neural::{grad_check_stencil, GradCheckReport, Mode, ParamStore, Stencil};
use codemix::rng::RngStream;
use codemix::tokenizer::{train_unigram, TokenId, TrainerOptions};
use codemix::ulmfit::{
    bptt_batches, build_classifier, classifier_loss, lm_loss, new_lm, AwdLstmConfig, ClassifierConfig, DropoutNoise,
    HiddenState, UnfreezeScope,
};

/// Stencil step. The classifier head has ReLU and max-pool kinks, which a
/// large step can straddle.
pub const LM_STEP: f64 = 1e-2;
pub const CLASSIFIER_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-5;

fn random_stream(n: usize, vocab: usize, seed: u64) -> Vec<TokenId> {
    let mut rng = RngStream::new(seed);
    (0..n).map(|_| 1 + rng.below(vocab - 1) as TokenId).collect()
}

fn randomize(params: &mut ParamStore, seed: u64) {
    let mut rng = RngStream::new(seed);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        params.get_mut(id).data.iter_mut().for_each(|x| *x = rng.uniform_range(-0.5, 0.5));
    }
}

pub fn lm_report(mode: Mode) -> GradCheckReport {
    let config = AwdLstmConfig { bptt: 5, ..AwdLstmConfig::toy(50) };
    let mut model = new_lm(config.clone(), 11).unwrap();
    randomize(&mut model.params, 23);
    let stream = random_stream(24, 50, 3);
    let window = bptt_batches(&stream, 2, 5).unwrap().remove(0);
    let mut rng = RngStream::new(5);
    let mut hidden = HiddenState::zeros(&config, 2);
    for (h, c) in &mut hidden.layers {
        h.data.iter_mut().for_each(|x| *x = rng.uniform_range(-0.5, 0.5));
        c.data.iter_mut().for_each(|x| *x = rng.uniform_range(-0.5, 0.5));
    }
    let noise = DropoutNoise::new(17);
    grad_check_stencil(
        &mut model.params,
        |p: &ParamStore, need| {
            let (l, g, _) = lm_loss(&config, p, &window, &hidden, mode, &mut noise.clone(), UnfreezeScope::All, need).unwrap();
            (l, g)
        },
        LM_STEP,
        Stencil::Six,
    )
}

pub fn classifier_report(mode: Mode) -> GradCheckReport {
    let lines: Vec<String> = (0..30).map(|i| format!("abc bca cab {}", "ab".repeat(i % 4 + 1))).collect();
    let vocab = train_unigram(&lines, 12, &TrainerOptions::default()).unwrap();
    let mut lm = new_lm(AwdLstmConfig { bptt: 5, ..AwdLstmConfig::toy(vocab.id_space()) }, 2).unwrap();
    lm.vocab_fingerprint = vocab.fingerprint();
    let cls_config = ClassifierConfig { head_hidden_dim: 6, ..ClassifierConfig::default() };
    let mut cls = build_classifier(&lm, &vocab, cls_config, 4).unwrap();
    randomize(&mut cls.params, 29);
    let mut params = cls.params.clone();
    let n = vocab.id_space();
    let batch: Vec<Vec<TokenId>> = vec![
        random_stream(6, n, 1),
        random_stream(3, n, 2),
        random_stream(5, n, 3),
        random_stream(1, n, 4),
    ];
    let targets = [0, 1, 1, 0];
    let noise = DropoutNoise::new(31);
    // Running statistics taken from the batch itself, as after training.
    let mut bn = cls.bn.clone();
    bn.iter_mut().for_each(|b| b.momentum = 1.0);
    classifier_loss(&cls, &params, &mut bn, &batch, &targets, Mode::Train, &mut noise.clone(), UnfreezeScope::All, false)
        .unwrap();
    bn.iter_mut().for_each(|b| b.momentum = 0.1);
    grad_check_stencil(
        &mut params,
        |p: &ParamStore, need| {
            classifier_loss(&cls, p, &mut bn.clone(), &batch, &targets, mode, &mut noise.clone(), UnfreezeScope::All, need)
                .unwrap()
        },
        CLASSIFIER_STEP,
        Stencil::Six,
    )
}

