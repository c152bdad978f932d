//! Confusion matrices and support-weighted precision / recall / F1.
//!
//! Undefined ratios (zero denominators) are reported as 0.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to score")]
    EmptyMatrix,
}

/// Rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }
}

/// Builds the matrix over the sorted union of observed labels.
pub fn confusion<L>(golds: &[L], preds: &[L]) -> Result<ConfusionMatrix, MetricsError>
where
    L: Ord + Clone + fmt::Display,
{
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            gold: golds.len(),
            pred: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let set: BTreeSet<&L> = golds.iter().chain(preds).collect();
    let order: Vec<&L> = set.into_iter().collect();
    let pos = |l: &L| order.binary_search(&l).expect("label observed");
    let mut counts = vec![vec![0; order.len()]; order.len()];
    for (g, p) in golds.iter().zip(preds) {
        counts[pos(g)][pos(p)] += 1;
    }
    Ok(ConfusionMatrix {
        labels: order.iter().map(|l| l.to_string()).collect(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<EvalReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let n = cm.labels.len();
    let mut per_class = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    let mut correct = 0;
    for c in 0..n {
        let tp = cm.counts[c][c];
        correct += tp;
        let support: usize = cm.counts[c].iter().sum();
        let predicted: usize = cm.counts.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / total as f64;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics {
            label: cm.labels[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(EvalReport {
        per_class,
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f1: wf,
        accuracy: correct as f64 / total as f64,
        confusion: cm.clone(),
    })
}

/// Convenience: confusion then weighted metrics.
pub fn evaluate<L>(golds: &[L], preds: &[L]) -> Result<EvalReport, MetricsError>
where
    L: Ord + Clone + fmt::Display,
{
    weighted_prf(&confusion(golds, preds)?)
}

impl fmt::Display for EvalReport {
    /// Per-class table with a weighted row, two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>9} {:>9} {:>9} {:>8}", "label", "precision", "recall", "f1", "support")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<12} {:>9.2} {:>9.2} {:>9.2} {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            )?;
        }
        writeln!(
            f,
            "{:<12} {:>9.2} {:>9.2} {:>9.2} {:>8}",
            "weighted",
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
            self.confusion.total()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let g = ["A", "B", "B", "A"];
        let cm = confusion(&g, &g).unwrap();
        assert!(cm.is_diagonal());
        let r = weighted_prf(&cm).unwrap();
        assert_eq!((r.weighted_precision, r.weighted_recall, r.weighted_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_predicted_class_is_one_column() {
        let cm = confusion(&["A", "B", "B"], &["B", "B", "B"]).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 1], vec![0, 2]]);
    }

    #[test]
    fn eight_pair_hand_count() {
        let g = ["x", "y", "z", "x", "y", "z", "x", "x"];
        let p = ["x", "z", "z", "y", "y", "x", "x", "z"];
        let cm = confusion(&g, &p).unwrap();
        assert_eq!(cm.labels, vec!["x", "y", "z"]);
        assert_eq!(cm.counts, vec![vec![2, 1, 1], vec![0, 1, 1], vec![1, 0, 1]]);
    }

    #[test]
    fn hand_computed_weighted_scores() {
        let r = evaluate(&["A", "A", "A", "B"], &["A", "A", "B", "B"]).unwrap();
        let a = &r.per_class[0];
        let b = &r.per_class[1];
        assert_eq!(a.precision, 1.0);
        assert!((a.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.f1 - 0.8).abs() < 1e-12);
        assert_eq!(b.precision, 0.5);
        assert_eq!(b.recall, 1.0);
        assert!((b.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.weighted_f1 - (0.75 * 0.8 + 0.25 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((r.weighted_f1 - 0.7667).abs() < 1e-4);
    }

    #[test]
    fn zero_support_class_has_no_weight() {
        let cm = ConfusionMatrix {
            labels: vec!["A".into(), "B".into(), "C".into()],
            counts: vec![vec![3, 1, 0], vec![0, 2, 0], vec![0, 0, 0]],
        };
        let r = weighted_prf(&cm).unwrap();
        let c = &r.per_class[2];
        assert_eq!((c.precision, c.recall, c.f1, c.support), (0.0, 0.0, 0.0, 0));
        assert!((r.weighted_recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            confusion(&["A"], &["A", "B"]),
            Err(MetricsError::LengthMismatch { gold: 1, pred: 2 })
        );
        let empty: [&str; 0] = [];
        assert_eq!(confusion(&empty, &empty), Err(MetricsError::EmptyMatrix));
    }
}
