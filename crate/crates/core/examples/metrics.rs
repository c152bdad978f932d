//! Confusion matrix and weighted precision, recall and F1 for a handful of
//! predictions, read from a two-column TSV (gold, predicted) if given.
//!
//!     cargo run --release --example metrics -- [pairs.tsv]

use anyhow::{Context, Result};
use codemix::metrics::{confusion, evaluate};

fn main() -> Result<()> {
    let (golds, preds): (Vec<String>, Vec<String>) = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (g, p) = l.split_once('\t').with_context(|| format!("expected gold<TAB>pred: {l:?}"))?;
                Ok((g.trim().to_string(), p.trim().to_string()))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        None => [("OFF", "OFF"), ("OFF", "NOT"), ("NOT", "NOT"), ("NOT", "NOT"), ("NOT", "OFF"), ("OFF", "OFF"), ("NOT", "NOT")]
            .iter()
            .map(|&(g, p)| (g.to_string(), p.to_string()))
            .unzip(),
    };
    let cm = confusion(&golds, &preds)?;
    println!("gold \\ pred  {:?}", cm.labels);
    for (label, row) in cm.labels.iter().zip(&cm.counts) {
        println!("{label:>11}  {row:?}");
    }
    println!("\n{}", evaluate(&golds, &preds)?);
    Ok(())
}
