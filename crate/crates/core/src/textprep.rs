//! Classification-text preprocessing, script detection, dataset statistics
//! and stratified train/validation splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {0} has fewer than two examples")]
    ClassTooSmall(Label),
    #[error("validation fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("malformed labeled row at line {0}")]
    MalformedRow(usize),
    #[error("unknown label `{label}` at line {line}")]
    UnknownLabel { line: usize, label: String },
    #[error("invalid UTF-8 at byte offset {0}")]
    InvalidUtf8(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NOT")]
    NotOffensive,
    #[serde(rename = "OFF")]
    Offensive,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NotOffensive, Label::Offensive];

    /// Class index used by the classifier head.
    pub fn index(self) -> usize {
        match self {
            Label::NotOffensive => 0,
            Label::Offensive => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::NotOffensive => "NOT",
            Label::Offensive => "OFF",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" | "offensive" => Ok(Label::Offensive),
            "not" | "not-offensive" | "not_offensive" => Ok(Label::NotOffensive),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// Lowercases, drops `@mention` and URL tokens, collapses whitespace.
///
/// A mention is a whitespace-delimited token starting with `@` and at least
/// one more character; a URL token starts with `http://`, `https://` or
/// `www.`. Idempotent.
pub fn preprocess(text: &str) -> String {
    let lowered = text.to_lowercase();
    let kept: Vec<&str> = lowered
        .split_whitespace()
        .filter(|tok| !is_mention(tok) && !is_url(tok))
        .collect();
    kept.join(" ")
}

fn is_mention(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with('@')
}

fn is_url(tok: &str) -> bool {
    tok.starts_with("http://") || tok.starts_with("https://") || tok.starts_with("www.")
}

/// Inclusive code-point ranges treated as native (non-Roman) script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBlocks(pub Vec<(u32, u32)>);

impl ScriptBlocks {
    pub const MALAYALAM: (u32, u32) = (0x0D00, 0x0D7F);
    pub const TAMIL: (u32, u32) = (0x0B80, 0x0BFF);

    pub fn contains(&self, c: char) -> bool {
        let cp = c as u32;
        self.0.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp))
    }
}

impl Default for ScriptBlocks {
    fn default() -> Self {
        ScriptBlocks(vec![Self::MALAYALAM, Self::TAMIL])
    }
}

pub fn is_roman_only(text: &str) -> bool {
    is_roman_only_with(text, &ScriptBlocks::default())
}

pub fn is_roman_only_with(text: &str, blocks: &ScriptBlocks) -> bool {
    !text.chars().any(|c| blocks.contains(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_examples: usize,
    pub n_classes: usize,
    pub class_counts: BTreeMap<Label, usize>,
    pub pct_roman_only: f64,
    pub min_examples_per_class: usize,
    pub max_examples_per_class: usize,
    pub avg_examples_per_class: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub avg_tokens: f64,
    pub median_tokens: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 10] = [
            ("no. of classes", self.n_classes.to_string()),
            ("no. of examples", self.n_examples.to_string()),
            ("% only Roman characters", format!("{:.1}%", self.pct_roman_only)),
            ("min. examples in a class", self.min_examples_per_class.to_string()),
            ("max. examples in a class", self.max_examples_per_class.to_string()),
            ("avg. examples in a class", format!("{:.3}", self.avg_examples_per_class)),
            ("min. tokens in an example", self.min_tokens.to_string()),
            ("max. tokens in an example", self.max_tokens.to_string()),
            ("avg. tokens in an example", format!("{:.3}", self.avg_tokens)),
            ("median tokens in an example", format!("{}", self.median_tokens)),
        ];
        for (name, value) in rows {
            writeln!(f, "{name:<30} {value:>10}")?;
        }
        Ok(())
    }
}

/// Table-style statistics over the raw text. Tokens are whitespace-split
/// units; the median of an even-sized sample is the lower middle value.
pub fn compute_stats(dataset: &[LabeledExample]) -> Result<DatasetStats, TextprepError> {
    compute_stats_with(dataset, &ScriptBlocks::default())
}

pub fn compute_stats_with(
    dataset: &[LabeledExample],
    blocks: &ScriptBlocks,
) -> Result<DatasetStats, TextprepError> {
    if dataset.is_empty() {
        return Err(TextprepError::EmptyDataset);
    }
    let n = dataset.len();
    let mut class_counts = BTreeMap::new();
    let mut roman = 0usize;
    let mut tokens: Vec<usize> = Vec::with_capacity(n);
    for ex in dataset {
        *class_counts.entry(ex.label).or_insert(0) += 1;
        if is_roman_only_with(&ex.text, blocks) {
            roman += 1;
        }
        tokens.push(ex.text.split_whitespace().count());
    }
    tokens.sort_unstable();
    let total_tokens: usize = tokens.iter().sum();
    let counts: Vec<usize> = class_counts.values().copied().collect();
    Ok(DatasetStats {
        n_examples: n,
        n_classes: class_counts.len(),
        pct_roman_only: 100.0 * roman as f64 / n as f64,
        min_examples_per_class: *counts.iter().min().unwrap(),
        max_examples_per_class: *counts.iter().max().unwrap(),
        avg_examples_per_class: n as f64 / counts.len() as f64,
        min_tokens: tokens[0],
        max_tokens: tokens[n - 1],
        avg_tokens: total_tokens as f64 / n as f64,
        median_tokens: tokens[(n - 1) / 2] as f64,
        class_counts,
    })
}

/// Stratified split. Each class contributes `round(count * valid_fraction)`
/// examples to validation; order within each output follows the input order.
pub fn split_train_valid(
    dataset: &[LabeledExample],
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>), TextprepError> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(TextprepError::BadFraction(valid_fraction));
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, ex) in dataset.iter().enumerate() {
        by_class.entry(ex.label).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(TextprepError::EmptyDataset);
    }
    let mut in_valid = vec![false; dataset.len()];
    for (label, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(TextprepError::ClassTooSmall(label));
        }
        let k = (idx.len() as f64 * valid_fraction).round() as usize;
        let mut rng = RngStream::derived(seed, label.code());
        rng.shuffle(&mut idx);
        for &i in &idx[..k] {
            in_valid[i] = true;
        }
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (ex, v) in dataset.iter().zip(in_valid) {
        if v {
            valid.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((train, valid))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    id: serde_json::Value,
    text: String,
    label: String,
}

/// Loads labeled data: JSONL `{id, text, label}` or TSV `id<TAB>text<TAB>label`.
/// A TSV first line whose label column does not parse is treated as a header.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>, TextprepError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text =
        std::str::from_utf8(&bytes).map_err(|e| TextprepError::InvalidUtf8(e.valid_up_to()))?;
    let tsv = matches!(path.extension().and_then(|e| e.to_str()), Some("tsv") | Some("tab"));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let (id, body, label) = if tsv {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(TextprepError::MalformedRow(line_no));
            }
            (cols[0].to_string(), cols[1].to_string(), cols[2].to_string())
        } else {
            let row: JsonRow =
                serde_json::from_str(line).map_err(|_| TextprepError::MalformedRow(line_no))?;
            let id = match row.id {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                _ => return Err(TextprepError::MalformedRow(line_no)),
            };
            (id, row.text, row.label)
        };
        let label = match label.parse::<Label>() {
            Ok(l) => l,
            Err(_) if tsv && line_no == 1 && out.is_empty() => continue,
            Err(l) => return Err(TextprepError::UnknownLabel { line: line_no, label: l }),
        };
        if id.trim().is_empty() {
            return Err(TextprepError::MalformedRow(line_no));
        }
        out.push(LabeledExample::new(id, body, label));
    }
    Ok(out)
}

/// Writes labeled data as JSONL, or TSV when the path ends in `.tsv`.
pub fn save_labeled(examples: &[LabeledExample], path: impl AsRef<Path>) -> Result<(), TextprepError> {
    let path = path.as_ref();
    let tsv = matches!(path.extension().and_then(|e| e.to_str()), Some("tsv"));
    let mut s = String::new();
    for ex in examples {
        if tsv {
            s.push_str(&format!("{}\t{}\t{}\n", ex.id, ex.text, ex.label));
        } else {
            s.push_str(&serde_json::to_string(ex).expect("serializable"));
            s.push('\n');
        }
    }
    fs::write(path, s)?;
    Ok(())
}
