//! Parallel corpora: the same sentence in native script, translated and
//! transliterated form, aligned line by line.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("corpus contains no usable rows")]
    EmptyCorpus,
    #[error("invalid UTF-8 at byte offset {0}")]
    InvalidUtf8(usize),
    #[error("unknown corpus format `{0}` (expected jsonl or tsv)")]
    UnknownFormat(String),
    #[error("field {field} of triple {index} cannot be written as TSV")]
    Unwritable { index: usize, field: &'static str },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Tsv => "tsv",
        })
    }
}

/// One sentence in its three parallel forms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceTriple {
    pub native: String,
    pub translated: String,
    pub transliterated: String,
}

impl SentenceTriple {
    pub fn new(
        native: impl Into<String>,
        translated: impl Into<String>,
        transliterated: impl Into<String>,
    ) -> Self {
        Self {
            native: native.into(),
            translated: translated.into(),
            transliterated: transliterated.into(),
        }
    }

    pub fn fields(&self) -> [&str; 3] {
        [&self.native, &self.translated, &self.transliterated]
    }

    fn trimmed(self) -> Self {
        Self {
            native: self.native.trim().to_string(),
            translated: self.translated.trim().to_string(),
            transliterated: self.transliterated.trim().to_string(),
        }
    }
}

/// An ordered, immutable sequence of sentence triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    triples: Vec<SentenceTriple>,
    source_id: String,
}

impl ParallelCorpus {
    pub fn new(
        triples: Vec<SentenceTriple>,
        source_id: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        if triples.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self {
            triples,
            source_id: source_id.into(),
        })
    }

    pub fn triples(&self) -> &[SentenceTriple] {
        &self.triples
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Reads a parallel corpus. Fields are trimmed; rows whose fields are all
/// blank are skipped (and counted in a warning); a row with only some
/// fields blank is malformed.
pub fn load_parallel_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<ParallelCorpus, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let text =
        std::str::from_utf8(&bytes).map_err(|e| CorpusError::InvalidUtf8(e.valid_up_to()))?;
    let (triples, skipped) = parse_rows(text, format)?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} empty rows", path.display());
    }
    ParallelCorpus::new(triples, path.display().to_string())
}

fn parse_rows(text: &str, format: CorpusFormat) -> Result<(Vec<SentenceTriple>, usize), CorpusError> {
    let mut triples = Vec::new();
    let mut skipped = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let triple = match format {
            CorpusFormat::Jsonl => serde_json::from_str::<SentenceTriple>(line)
                .map_err(|_| CorpusError::MalformedRow(line_no))?,
            CorpusFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    return Err(CorpusError::MalformedRow(line_no));
                }
                SentenceTriple::new(cols[0], cols[1], cols[2])
            }
        }
        .trimmed();
        let blank = triple.fields().map(str::is_empty);
        if blank.iter().all(|&b| b) {
            skipped += 1;
            continue;
        }
        if blank.iter().any(|&b| b) || triple.fields().iter().any(|f| f.contains('\n')) {
            return Err(CorpusError::MalformedRow(line_no));
        }
        triples.push(triple);
    }
    Ok((triples, skipped))
}

/// Writes a corpus in the given format, one triple per line.
pub fn write_parallel_corpus(
    corpus: &ParallelCorpus,
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (index, t) in corpus.triples().iter().enumerate() {
        match format {
            CorpusFormat::Jsonl => {
                serde_json::to_writer(&mut out, t).map_err(std::io::Error::from)?;
            }
            CorpusFormat::Tsv => {
                for (field, value) in ["native", "translated", "transliterated"]
                    .into_iter()
                    .zip(t.fields())
                {
                    if value.contains(['\t', '\n', '\r']) {
                        return Err(CorpusError::Unwritable { index, field });
                    }
                }
                write!(out, "{}\t{}\t{}", t.native, t.translated, t.transliterated)?;
            }
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes one newline-terminated line per string.
pub fn write_lines<S: AsRef<str>>(lines: &[S], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for line in lines {
        out.write_all(line.as_ref().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a UTF-8 file as lines (without terminators).
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path)?;
    let text =
        std::str::from_utf8(&bytes).map_err(|e| CorpusError::InvalidUtf8(e.valid_up_to()))?;
    Ok(text.lines().map(str::to_string).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub rows: usize,
    /// Rows with an empty field, per variant (native, translated, transliterated).
    pub empty_variants: [usize; 3],
    /// Triples identical to an earlier triple.
    pub duplicates: usize,
    /// Mean of `chars(variant) / chars(native)` per variant, over rows with a
    /// non-empty native field.
    pub mean_length_ratio: [f64; 3],
}

pub fn validate_alignment(corpus: &ParallelCorpus) -> AlignmentReport {
    let mut empty_variants = [0; 3];
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    let mut ratio_sum = [0.0; 3];
    let mut ratio_rows = 0usize;
    for t in corpus.triples() {
        let fields = t.fields();
        for (k, f) in fields.iter().enumerate() {
            if f.trim().is_empty() {
                empty_variants[k] += 1;
            }
        }
        if !seen.insert(t) {
            duplicates += 1;
        }
        let native_len = fields[0].chars().count();
        if native_len > 0 {
            ratio_rows += 1;
            for (k, f) in fields.iter().enumerate() {
                ratio_sum[k] += f.chars().count() as f64 / native_len as f64;
            }
        }
    }
    let mean_length_ratio = if ratio_rows == 0 {
        [0.0; 3]
    } else {
        ratio_sum.map(|s| s / ratio_rows as f64)
    };
    AlignmentReport {
        rows: corpus.len(),
        empty_variants,
        duplicates,
        mean_length_ratio,
    }
}
