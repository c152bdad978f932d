//! Finite-difference checks of the toy language model and classifier.

mod common;

use codemix::neural::Mode;
use common::grad::{classifier_report, lm_report, TOLERANCE};

#[test]
fn language_model_gradients_eval_mode() {
    let r = lm_report(Mode::Eval);
    assert!(r.passes(TOLERANCE, 1e-8), "{r:?}");
}

#[test]
fn language_model_gradients_with_dropout() {
    let r = lm_report(Mode::Train);
    assert!(r.passes(TOLERANCE, 1e-8), "{r:?}");
}

#[test]
fn classifier_gradients_eval_mode() {
    let r = classifier_report(Mode::Eval);
    assert!(r.passes(TOLERANCE, 1e-8), "{r:?}");
}

#[test]
fn classifier_gradients_with_dropout() {
    let r = classifier_report(Mode::Train);
    assert!(r.passes(TOLERANCE, 1e-8), "{r:?}");
}
