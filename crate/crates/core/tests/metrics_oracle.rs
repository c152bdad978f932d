mod common;

use codemix::metrics::{confusion, evaluate, weighted_prf};
use codemix::rng::RngStream;
use common::brute_force_weighted;
use proptest::prelude::*;

fn random_set(rng: &mut RngStream) -> (Vec<u8>, Vec<u8>) {
    let k = 2 + rng.below(3);
    let n = 1 + rng.below(60);
    let golds = (0..n).map(|_| rng.below(k) as u8).collect();
    let preds = (0..n).map(|_| rng.below(k) as u8).collect();
    (golds, preds)
}

#[test]
fn hand_case() {
    let r = evaluate(&["A", "A", "A", "B"], &["A", "A", "B", "B"]).unwrap();
    assert!((r.weighted_f1 - 0.7667).abs() < 1e-4, "{}", r.weighted_f1);
    let a = &r.per_class[0];
    assert_eq!(a.label, "A");
    assert!((a.precision - 1.0).abs() < 1e-12 && (a.recall - 2.0 / 3.0).abs() < 1e-12 && (a.f1 - 0.8).abs() < 1e-12);
    let b = &r.per_class[1];
    assert!((b.precision - 0.5).abs() < 1e-12 && (b.recall - 1.0).abs() < 1e-12);
}

#[test]
fn matches_brute_force_on_a_thousand_random_sets() {
    let mut rng = RngStream::new(1000);
    for _ in 0..1000 {
        let (golds, preds) = random_set(&mut rng);
        let r = evaluate(&golds, &preds).unwrap();
        let (p, rc, f) = brute_force_weighted(&golds, &preds);
        assert!((r.weighted_precision - p).abs() < 1e-12);
        assert!((r.weighted_recall - rc).abs() < 1e-12);
        assert!((r.weighted_f1 - f).abs() < 1e-12);
    }
}

#[test]
fn eight_pair_confusion() {
    let golds = ["x", "x", "y", "y", "z", "z", "x", "y"];
    let preds = ["x", "y", "y", "y", "x", "z", "x", "z"];
    let cm = confusion(&golds, &preds).unwrap();
    assert_eq!(cm.labels, ["x", "y", "z"]);
    assert_eq!(cm.counts, vec![vec![2, 1, 0], vec![0, 2, 1], vec![1, 0, 1]]);
    assert_eq!(weighted_prf(&cm).unwrap(), evaluate(&golds, &preds).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn permutation_invariant_and_bounded(pairs in prop::collection::vec((0u8..3, 0u8..3), 1..50), seed in any::<u64>()) {
        let (golds, preds): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let r = evaluate(&golds, &preds).unwrap();
        let mut shuffled = pairs.clone();
        RngStream::new(seed).shuffle(&mut shuffled);
        let (g2, p2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        let r2 = evaluate(&g2, &p2).unwrap();
        prop_assert_eq!(r.weighted_f1, r2.weighted_f1);
        prop_assert_eq!(r.weighted_precision, r2.weighted_precision);
        let accuracy = golds.iter().zip(&preds).filter(|(g, p)| g == p).count() as f64 / golds.len() as f64;
        prop_assert!((r.weighted_recall - accuracy).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.weighted_f1));
        prop_assert_eq!((r.weighted_f1 - 1.0).abs() < 1e-12, r.confusion.is_diagonal());
    }
}
