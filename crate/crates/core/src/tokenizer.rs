//! Unigram-language-model subword tokenizer.
//!
//! Text is split on whitespace and every word is prefixed with
//! [`WORD_BOUNDARY`] (U+2581), so pieces never span words and decoding maps the
//! marker back to a space. Each piece carries a natural-log probability; the
//! probabilities of all trained pieces sum to one.
//!
//! Training starts from a large seed vocabulary of frequent substrings and
//! alternates EM re-estimation (forward-backward over each word's
//! segmentation lattice) with pruning of the pieces whose removal costs the
//! least corpus likelihood, until the target size is reached.
//!
//! Id layout: `0` is `<pad>`, `1..=256` are byte-fallback pieces `<0x00>` ..
//! `<0xFF>` used for characters the vocabulary does not cover, and trained
//! pieces follow from [`FIRST_PIECE_ID`] in vocabulary order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const WORD_BOUNDARY: char = '\u{2581}';
pub const PAD_ID: TokenId = 0;
pub const PAD_PIECE: &str = "<pad>";
pub const FIRST_PIECE_ID: TokenId = 257;

/// Score penalty (below the least likely piece) for a byte-fallback character.
const UNK_PENALTY: f64 = 10.0;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is below the {chars} distinct characters")]
    TargetTooSmall { target: usize, chars: usize },
    #[error("word `{0}` cannot be segmented with this vocabulary")]
    UnsegmentableWord(String),
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("malformed vocabulary row at line {0}")]
    MalformedVocabRow(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Collapses whitespace runs to single spaces and trims. The boundary marker
/// itself is treated as whitespace so that decoding is lossless.
pub fn normalize(text: &str) -> String {
    text.split(|c: char| c.is_whitespace() || c == WORD_BOUNDARY)
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits normalized text into boundary-marked words.
pub fn marked_words(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut s = String::with_capacity(w.len() + 3);
            s.push(WORD_BOUNDARY);
            s.push_str(w);
            s
        })
        .collect()
}

/// Training corpus reduced to boundary-marked word frequencies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts {
    words: BTreeMap<String, u64>,
}

impl WordCounts {
    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Self {
        let mut words = BTreeMap::new();
        for line in lines {
            for w in marked_words(line.as_ref()) {
                *words.entry(w).or_insert(0) += 1;
            }
        }
        Self { words }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(|(w, &c)| (w.as_str(), c))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn chars(&self) -> BTreeSet<char> {
        self.words.keys().flat_map(|w| w.chars()).collect()
    }
}

/// Trained pieces with natural-log probabilities.
#[derive(Debug, Clone)]
pub struct UnigramVocab {
    pieces: Vec<(String, f64)>,
    index: FxHashMap<String, usize>,
    trie: PieceTrie,
    required_chars: BTreeSet<char>,
    target_size: usize,
    min_log_prob: f64,
}

impl PartialEq for UnigramVocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
    }
}

impl UnigramVocab {
    /// Builds a vocabulary from raw (unnormalised, positive) weights or
    /// log-probabilities; the result is renormalised and put in canonical
    /// order (probability descending, then piece).
    pub fn from_log_probs(
        pieces: Vec<(String, f64)>,
        required_chars: BTreeSet<char>,
        target_size: usize,
    ) -> Self {
        let mut v = Self::ordered(pieces, required_chars, target_size);
        v.renormalize();
        v.sort_canonical();
        v
    }

    /// Keeps the given order and values verbatim.
    fn ordered(pieces: Vec<(String, f64)>, required_chars: BTreeSet<char>, target_size: usize) -> Self {
        let mut v = Self {
            pieces,
            index: FxHashMap::default(),
            trie: PieceTrie::default(),
            required_chars,
            target_size,
            min_log_prob: 0.0,
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (p.clone(), i))
            .collect();
        self.trie = PieceTrie::build(&self.pieces);
        self.min_log_prob = self
            .pieces
            .iter()
            .map(|&(_, lp)| lp)
            .fold(0.0, f64::min);
    }

    fn renormalize(&mut self) {
        let log_z = log_sum_exp(self.pieces.iter().map(|&(_, lp)| lp));
        for (_, lp) in &mut self.pieces {
            *lp = (*lp - log_z).min(0.0);
        }
        self.reindex();
    }

    fn sort_canonical(&mut self) {
        self.pieces
            .sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        self.reindex();
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    /// Number of trained pieces (excludes `<pad>` and byte fallback).
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Total id space: `<pad>`, 256 byte pieces, trained pieces.
    pub fn id_space(&self) -> usize {
        FIRST_PIECE_ID as usize + self.pieces.len()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn required_chars(&self) -> &BTreeSet<char> {
        &self.required_chars
    }

    pub fn log_prob(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.pieces[i].1)
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.index.contains_key(piece)
    }

    pub fn id_of(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).map(|&i| FIRST_PIECE_ID + i as TokenId)
    }

    /// Display form of any id.
    pub fn piece_str(&self, id: TokenId) -> Result<String, TokenizerError> {
        match id {
            PAD_ID => Ok(PAD_PIECE.to_string()),
            1..=256 => Ok(format!("<0x{:02X}>", id - 1)),
            _ => self
                .pieces
                .get((id - FIRST_PIECE_ID) as usize)
                .map(|(p, _)| p.clone())
                .ok_or(TokenizerError::UnknownId(id)),
        }
    }

    fn unk_score(&self) -> f64 {
        self.min_log_prob - UNK_PENALTY
    }

    /// Stable content hash of the serialised vocabulary.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (p, lp) in &self.pieces {
            // `{}` prints the shortest representation that parses back exactly.
            let _ = writeln!(s, "{p}\t{lp}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, TokenizerError> {
        let mut pieces = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let (piece, lp) = line
                .split_once('\t')
                .ok_or(TokenizerError::MalformedVocabRow(line_no))?;
            let lp: f64 = lp
                .trim()
                .parse()
                .map_err(|_| TokenizerError::MalformedVocabRow(line_no))?;
            if piece.is_empty() || !lp.is_finite() || lp > 0.0 || !seen.insert(piece.to_string()) {
                return Err(TokenizerError::MalformedVocabRow(line_no));
            }
            pieces.push((piece.to_string(), lp));
        }
        if pieces.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let required: BTreeSet<char> = pieces
            .iter()
            .filter_map(|(p, _)| single_char(p))
            .collect();
        let n = pieces.len();
        Ok(Self::ordered(pieces, required, n))
    }

    /// `(end, piece index)` for every piece that starts at char `start`.
    fn edges_from<'a>(&'a self, word: &'a str, offsets: &'a [usize], start: usize) -> impl Iterator<Item = (usize, usize)> + 'a {
        let mut node = 0;
        word[offsets[start]..]
            .chars()
            .enumerate()
            .map_while(move |(k, c)| {
                node = self.trie.child(node, c)?;
                Some((start + k + 1, self.trie.nodes[node].piece))
            })
            .filter_map(|(end, pi)| pi.map(|pi| (end, pi)))
    }
}

/// Character trie over the pieces, for common-prefix search in the lattice.
#[derive(Debug, Clone, Default)]
struct PieceTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(char, usize)>,
    piece: Option<usize>,
}

impl PieceTrie {
    fn build(pieces: &[(String, f64)]) -> Self {
        let mut t = Self { nodes: vec![TrieNode::default()] };
        for (i, (p, _)) in pieces.iter().enumerate() {
            let mut node = 0;
            for c in p.chars() {
                let n = t.nodes.len();
                node = match t.nodes[node].children.binary_search_by_key(&c, |&(k, _)| k) {
                    Ok(at) => t.nodes[node].children[at].1,
                    Err(at) => {
                        t.nodes[node].children.insert(at, (c, n));
                        t.nodes.push(TrieNode::default());
                        n
                    }
                };
            }
            t.nodes[node].piece = Some(i);
        }
        t
    }

    fn child(&self, node: usize, c: char) -> Option<usize> {
        let children = &self.nodes[node].children;
        children.binary_search_by_key(&c, |&(k, _)| k).ok().map(|at| children[at].1)
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

fn char_offsets(word: &str) -> Vec<usize> {
    let mut offs = Vec::with_capacity(word.len() + 1);
    offs.extend(word.char_indices().map(|(i, _)| i));
    offs.push(word.len());
    offs
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Result of Viterbi encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub ids: Vec<TokenId>,
    pub score: f64,
}

#[derive(Clone, Copy)]
enum Step {
    Piece(usize),
    Fallback,
}

#[derive(Clone, Copy)]
struct Best {
    score: f64,
    count: usize,
    step: Step,
    next: usize,
}

fn consider<'w>(cur: &mut Option<(Best, &'w str)>, cand: Best, text: &'w str) {
    let better = match cur {
        None => true,
        Some((b, t)) => match cand.score.total_cmp(&b.score) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match cand.count.cmp(&b.count) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => text < *t,
            },
        },
    };
    if better {
        *cur = Some((cand, text));
    }
}

/// Best segmentation of one marked word as a sequence of steps. Suffix DP:
/// `best[i]` is the optimum for `word[i..]`, compared by score (higher), then
/// piece count (fewer), then the piece sequence lexicographically. Because
/// every suffix optimum is unique under that order, comparing the first piece
/// decides the lexicographic tie-break exactly. Path entries are byte ranges.
fn viterbi_word(
    v: &UnigramVocab,
    word: &str,
    skip: Option<usize>,
    allow_fallback: bool,
) -> Option<(f64, Vec<(usize, usize, Step)>)> {
    let offs = char_offsets(word);
    let n = offs.len() - 1;
    let mut best: Vec<Option<Best>> = vec![None; n + 1];
    best[n] = Some(Best {
        score: 0.0,
        count: 0,
        step: Step::Fallback,
        next: n,
    });
    for i in (0..n).rev() {
        let mut cur: Option<(Best, &str)> = None;
        let mut has_single = false;
        for (end, pi) in v.edges_from(word, &offs, i) {
            if Some(pi) == skip {
                continue;
            }
            if end == i + 1 {
                has_single = true;
            }
            if let Some(rest) = best[end] {
                let (piece, lp) = &v.pieces[pi];
                let cand = Best {
                    score: lp + rest.score,
                    count: rest.count + 1,
                    step: Step::Piece(pi),
                    next: end,
                };
                consider(&mut cur, cand, piece.as_str());
            }
        }
        if !has_single && allow_fallback {
            if let Some(rest) = best[i + 1] {
                let cand = Best {
                    score: v.unk_score() + rest.score,
                    count: rest.count + 1,
                    step: Step::Fallback,
                    next: i + 1,
                };
                consider(&mut cur, cand, &word[offs[i]..offs[i + 1]]);
            }
        }
        best[i] = cur.map(|(b, _)| b);
    }
    let total = best[0]?.score;
    let mut path = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let b = best[i].expect("reachable");
        path.push((offs[i], offs[b.next], b.step));
        i = b.next;
    }
    Some((total, path))
}

fn push_word_ids(v: &UnigramVocab, word: &str, out: &mut Segmentation) {
    let (score, path) = viterbi_word(v, word, None, true).expect("fallback makes every word segmentable");
    out.score += score;
    for (start, end, step) in path {
        match step {
            Step::Piece(pi) => out.ids.push(FIRST_PIECE_ID + pi as TokenId),
            Step::Fallback => {
                for b in word[start..end].bytes() {
                    out.ids.push(1 + b as TokenId);
                }
            }
        }
    }
}

/// Maximum-probability segmentation of `text` (normalised first).
pub fn viterbi_encode(v: &UnigramVocab, text: &str) -> Segmentation {
    let mut seg = Segmentation {
        ids: Vec::new(),
        score: 0.0,
    };
    for w in marked_words(text) {
        push_word_ids(v, &w, &mut seg);
    }
    seg
}

/// Inverse of [`viterbi_encode`]: `decode(encode(x)) == normalize(x)`.
/// `<pad>` ids decode to nothing.
pub fn decode(v: &UnigramVocab, ids: &[TokenId]) -> Result<String, TokenizerError> {
    let mut bytes: Vec<u8> = Vec::new();
    for &id in ids {
        match id {
            PAD_ID => {}
            1..=256 => bytes.push((id - 1) as u8),
            _ => {
                let (p, _) = v
                    .pieces
                    .get((id - FIRST_PIECE_ID) as usize)
                    .ok_or(TokenizerError::UnknownId(id))?;
                bytes.extend_from_slice(p.as_bytes());
            }
        }
    }
    let s = String::from_utf8_lossy(&bytes).replace(WORD_BOUNDARY, " ");
    Ok(s.strip_prefix(' ').map(str::to_string).unwrap_or(s))
}

/// Occurrence counts of every substring (1..=max_len chars) of the marked
/// words, weighted by word frequency.
pub fn substring_counts(words: &WordCounts, max_len: usize) -> BTreeMap<String, u64> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for (w, c) in words.iter() {
        let offs = char_offsets(w);
        let n = offs.len() - 1;
        for i in 0..n {
            for j in i + 1..=n.min(i + max_len) {
                *counts.entry(&w[offs[i]..offs[j]]).or_insert(0) += c;
            }
        }
    }
    counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Seed vocabulary: every character plus the most frequent longer
/// substrings (ties: longer first, then lexicographic) up to `seed_size`
/// entries. A `seed_size` below the character count is clamped up to it.
pub fn build_seed_vocab(
    words: &WordCounts,
    max_piece_len: usize,
    seed_size: usize,
    target_size: usize,
) -> Result<UnigramVocab, TokenizerError> {
    if words.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let max_piece_len = max_piece_len.max(1);
    let counts = substring_counts(words, max_piece_len);
    let chars = words.chars();
    let seed_size = seed_size.max(chars.len());
    let mut pieces: Vec<(String, f64)> = chars
        .iter()
        .map(|c| {
            let s = c.to_string();
            let n = counts[&s] as f64;
            (s, n)
        })
        .collect();
    let mut longer: Vec<(&String, u64)> = counts
        .iter()
        .filter(|(s, _)| single_char(s).is_none())
        .map(|(s, &n)| (s, n))
        .collect();
    longer.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| b.0.chars().count().cmp(&a.0.chars().count()))
            .then_with(|| a.0.cmp(b.0))
    });
    let room = seed_size - chars.len();
    pieces.extend(longer.into_iter().take(room).map(|(s, n)| (s.clone(), n as f64)));
    let pieces = pieces.into_iter().map(|(s, n)| (s, n.ln())).collect();
    Ok(UnigramVocab::from_log_probs(pieces, chars, target_size))
}

/// Marginal log-likelihood of one word: log of the sum over all segmentations.
pub fn word_log_likelihood(v: &UnigramVocab, word: &str) -> Option<f64> {
    let offs = char_offsets(word);
    let n = offs.len() - 1;
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    for i in 0..n {
        if alpha[i] == f64::NEG_INFINITY {
            continue;
        }
        for (end, pi) in v.edges_from(word, &offs, i) {
            alpha[end] = log_add(alpha[end], alpha[i] + v.pieces[pi].1);
        }
    }
    (alpha[n] > f64::NEG_INFINITY).then_some(alpha[n])
}

/// Corpus marginal log-likelihood.
pub fn corpus_log_likelihood(v: &UnigramVocab, words: &WordCounts) -> Result<f64, TokenizerError> {
    let mut total = 0.0;
    for (w, c) in words.iter() {
        let ll = word_log_likelihood(v, w)
            .ok_or_else(|| TokenizerError::UnsegmentableWord(w.to_string()))?;
        total += c as f64 * ll;
    }
    Ok(total)
}

/// One EM iteration. Returns the re-estimated vocabulary and the corpus
/// log-likelihood under the *input* vocabulary.
///
/// Expected piece counts come from forward-backward over each word's
/// lattice; the M-step sets each probability to its share of the expected
/// total. Multi-character pieces whose expected count is zero are dropped;
/// a character piece with zero count is kept at the smallest positive
/// probability so every corpus character stays segmentable.
pub fn em_round(v: &UnigramVocab, words: &WordCounts) -> Result<(UnigramVocab, f64), TokenizerError> {
    let mut expected = vec![0.0f64; v.pieces.len()];
    let mut total_ll = 0.0;
    for (w, c) in words.iter() {
        let offs = char_offsets(w);
        let n = offs.len() - 1;
        let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (i, e) in edges.iter_mut().enumerate() {
            e.extend(v.edges_from(w, &offs, i));
        }
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for i in 0..n {
            for &(end, pi) in &edges[i] {
                alpha[end] = log_add(alpha[end], alpha[i] + v.pieces[pi].1);
            }
        }
        let z = alpha[n];
        if z == f64::NEG_INFINITY {
            return Err(TokenizerError::UnsegmentableWord(w.to_string()));
        }
        let mut beta = vec![f64::NEG_INFINITY; n + 1];
        beta[n] = 0.0;
        for i in (0..n).rev() {
            for &(end, pi) in &edges[i] {
                beta[i] = log_add(beta[i], v.pieces[pi].1 + beta[end]);
            }
        }
        let cf = c as f64;
        for i in 0..n {
            for &(end, pi) in &edges[i] {
                let post = (alpha[i] + v.pieces[pi].1 + beta[end] - z).exp();
                expected[pi] += cf * post;
            }
        }
        total_ll += cf * z;
    }
    let sum: f64 = expected.iter().sum();
    let floor = f64::MIN_POSITIVE.ln();
    let mut pieces = Vec::with_capacity(v.pieces.len());
    for ((p, _), &e) in v.pieces.iter().zip(&expected) {
        if e > 0.0 {
            pieces.push((p.clone(), (e / sum).ln()));
        } else if single_char(p).is_some() {
            pieces.push((p.clone(), floor));
        }
    }
    let mut next = UnigramVocab::ordered(pieces, v.required_chars.clone(), v.target_size);
    next.sort_canonical();
    Ok((next, total_ll))
}

/// Corpus likelihood lost by removing each multi-character piece, under
/// Viterbi (best-path) scoring without renormalisation. Only words whose
/// best path uses a piece are re-segmented.
pub fn removal_losses(v: &UnigramVocab, words: &WordCounts) -> Result<Vec<(usize, f64)>, TokenizerError> {
    let mut users: Vec<Vec<(&str, u64, f64)>> = vec![Vec::new(); v.pieces.len()];
    for (w, c) in words.iter() {
        let (score, path) = viterbi_word(v, w, None, false)
            .ok_or_else(|| TokenizerError::UnsegmentableWord(w.to_string()))?;
        let mut used = BTreeSet::new();
        for (_, _, step) in path {
            if let Step::Piece(pi) = step {
                used.insert(pi);
            }
        }
        for pi in used {
            users[pi].push((w, c, score));
        }
    }
    let mut losses = Vec::new();
    for (pi, (p, _)) in v.pieces.iter().enumerate() {
        if single_char(p).is_some() {
            continue;
        }
        let mut loss = 0.0;
        for &(w, c, with) in &users[pi] {
            let (without, _) = viterbi_word(v, w, Some(pi), false)
                .ok_or_else(|| TokenizerError::UnsegmentableWord(w.to_string()))?;
            loss += c as f64 * (with - without);
        }
        losses.push((pi, loss));
    }
    Ok(losses)
}

/// Removal order for pruning: smallest loss first, then least likely, then
/// lexicographic.
pub fn prune_order(v: &UnigramVocab, mut losses: Vec<(usize, f64)>) -> Vec<String> {
    losses.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then_with(|| v.pieces[a.0].1.total_cmp(&v.pieces[b.0].1))
            .then_with(|| v.pieces[a.0].0.cmp(&v.pieces[b.0].0))
    });
    losses.into_iter().map(|(pi, _)| v.pieces[pi].0.clone()).collect()
}

/// Drops `ceil((1 - keep_fraction) * prunable)` multi-character pieces (never
/// going below the target size) in [`prune_order`], then renormalises.
pub fn prune(v: &UnigramVocab, words: &WordCounts, keep_fraction: f64) -> Result<UnigramVocab, TokenizerError> {
    if v.len() <= v.target_size {
        return Ok(v.clone());
    }
    let losses = removal_losses(v, words)?;
    let prunable = losses.len();
    let want = ((1.0 - keep_fraction) * prunable as f64).ceil() as usize;
    let n_remove = want.max(1).min(v.len() - v.target_size).min(prunable);
    let doomed: BTreeSet<String> = prune_order(v, losses).into_iter().take(n_remove).collect();
    let kept = v
        .pieces
        .iter()
        .filter(|(p, _)| !doomed.contains(p))
        .cloned()
        .collect();
    Ok(UnigramVocab::from_log_probs(kept, v.required_chars.clone(), v.target_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerOptions {
    pub max_piece_len: usize,
    /// Defaults to four times the target size.
    pub seed_size: Option<usize>,
    pub keep_fraction: f64,
    pub em_rounds_per_prune: usize,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        Self {
            max_piece_len: 16,
            seed_size: None,
            keep_fraction: 0.75,
            em_rounds_per_prune: 2,
        }
    }
}

/// Vocabulary sizes used for the Dravidian code-mixed models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabPreset {
    TamilLatin,
    MalayalamLatin,
    MalayalamMixed,
}

impl VocabPreset {
    pub fn size(self) -> usize {
        match self {
            VocabPreset::TamilLatin => 8000,
            VocabPreset::MalayalamLatin => 15000,
            VocabPreset::MalayalamMixed => 25000,
        }
    }
}

/// Full training loop: seed, then alternate EM and pruning until the
/// vocabulary fits `target_size`, then a final set of EM rounds.
///
/// `target_size` counts trained pieces, including the single-character
/// pieces and the boundary marker.
pub fn train_unigram<S: AsRef<str>>(
    lines: &[S],
    target_size: usize,
    opts: &TrainerOptions,
) -> Result<UnigramVocab, TokenizerError> {
    let words = WordCounts::from_lines(lines);
    if words.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let chars = words.chars().len();
    if target_size < chars {
        return Err(TokenizerError::TargetTooSmall {
            target: target_size,
            chars,
        });
    }
    let seed_size = opts.seed_size.unwrap_or(4 * target_size);
    let mut v = build_seed_vocab(&words, opts.max_piece_len, seed_size, target_size)?;
    let rounds = opts.em_rounds_per_prune.max(1);
    loop {
        for _ in 0..rounds {
            v = em_round(&v, &words)?.0;
        }
        if v.len() <= target_size {
            break;
        }
        v = prune(&v, &words, opts.keep_fraction)?;
        log::debug!("pruned vocabulary to {} pieces", v.len());
    }
    for _ in 0..rounds {
        v = em_round(&v, &words)?.0;
    }
    Ok(v)
}

pub fn save_vocab(v: &UnigramVocab, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
    fs::write(path, v.to_tsv())?;
    Ok(())
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<UnigramVocab, TokenizerError> {
    let text = fs::read_to_string(path)?;
    UnigramVocab::from_tsv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(pieces: &[(&str, f64)]) -> UnigramVocab {
        let required = pieces.iter().filter_map(|(p, _)| single_char(p)).collect();
        UnigramVocab::from_log_probs(
            pieces.iter().map(|&(p, x)| (p.to_string(), x.ln())).collect(),
            required,
            pieces.len(),
        )
    }

    fn pieces_of(v: &UnigramVocab, seg: &Segmentation) -> Vec<String> {
        seg.ids.iter().map(|&i| v.piece_str(i).unwrap()).collect()
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize("  a \t b\n\nc  "), "a b c");
        assert_eq!(normalize("x\u{2581}y"), "x y");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn viterbi_prefers_higher_score() {
        let v = vocab(&[("▁a", 0.5), ("b", 0.25), ("▁ab", 0.25)]);
        let seg = viterbi_encode(&v, "ab");
        assert_eq!(pieces_of(&v, &seg), vec!["▁ab"]);
        assert!((seg.score - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_fewer_pieces_then_lexicographic() {
        // "▁ab" (ln 0.25) ties with "▁a" + "b" (ln 0.5 + ln 0.5): fewer pieces wins
        let v = UnigramVocab::ordered(
            vec![
                ("▁ab".into(), 0.25f64.ln()),
                ("▁a".into(), 0.5f64.ln()),
                ("b".into(), 0.5f64.ln()),
            ],
            BTreeSet::new(),
            3,
        );
        assert_eq!(pieces_of(&v, &viterbi_encode(&v, "ab")), vec!["▁ab"]);
        // two 2-piece splits of equal score: "▁a"+"bc" vs "▁ab"+"c"
        let v = UnigramVocab::ordered(
            vec![
                ("▁ab".into(), -1.0),
                ("c".into(), -2.0),
                ("▁a".into(), -1.0),
                ("bc".into(), -2.0),
            ],
            BTreeSet::new(),
            4,
        );
        assert_eq!(pieces_of(&v, &viterbi_encode(&v, "abc")), vec!["▁a", "bc"]);
    }

    #[test]
    fn unknown_characters_fall_back_to_bytes() {
        let v = vocab(&[("▁", 0.5), ("a", 0.5)]);
        let seg = viterbi_encode(&v, "aé a");
        let shown = pieces_of(&v, &seg);
        assert_eq!(shown, vec!["▁", "a", "<0xC3>", "<0xA9>", "▁", "a"]);
        assert_eq!(decode(&v, &seg.ids).unwrap(), "aé a");
    }

    #[test]
    fn decode_edge_cases() {
        let v = vocab(&[("▁", 0.5), ("a", 0.5)]);
        assert_eq!(decode(&v, &[]).unwrap(), "");
        assert_eq!(decode(&v, &[PAD_ID]).unwrap(), "");
        assert!(matches!(decode(&v, &[9999]), Err(TokenizerError::UnknownId(9999))));
    }

    #[test]
    fn seed_vocab_tiny_case() {
        let words = WordCounts::from_lines(&["aa"]);
        let v = build_seed_vocab(&words, 2, 8, 8).unwrap();
        for p in ["a", "aa", "▁", "▁a"] {
            assert!(v.contains(p), "missing {p}");
        }
        assert!(!v.contains("▁aa"));
        let total: f64 = v.pieces().iter().map(|(_, lp)| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seed_size_clamped_to_char_count() {
        let words = WordCounts::from_lines(&["abc cab"]);
        let v = build_seed_vocab(&words, 4, 1, 4).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.pieces().iter().all(|(p, _)| single_char(p).is_some()));
    }

    #[test]
    fn em_with_characters_only_matches_raw_counts() {
        let words = WordCounts::from_lines(&["ab"]);
        let v = vocab(&[("▁", 0.2), ("a", 0.4), ("b", 0.4)]);
        let (next, ll) = em_round(&v, &words).unwrap();
        for p in ["▁", "a", "b"] {
            assert!((next.log_prob(p).unwrap().exp() - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((ll - (0.2f64 * 0.4 * 0.4).ln()).abs() < 1e-12);
    }

    #[test]
    fn em_posterior_matches_enumeration() {
        // word "▁ab" with pieces {▁, a, b, ab}: segmentations [▁,a,b] and [▁,ab]
        let (pm, pa, pb, pab) = (0.3, 0.2, 0.2, 0.3);
        let v = vocab(&[("▁", pm), ("a", pa), ("b", pb), ("ab", pab)]);
        let words = WordCounts::from_lines(&["ab"]);
        let s1 = pm * pa * pb;
        let s2 = pm * pab;
        let (w1, w2) = (s1 / (s1 + s2), s2 / (s1 + s2));
        // expected counts: ▁ 1, a w1, b w1, ab w2; total = 1 + 2 w1 + w2
        let total = 1.0 + 2.0 * w1 + w2;
        let (next, ll) = em_round(&v, &words).unwrap();
        assert!((ll - (s1 + s2).ln()).abs() < 1e-12);
        assert!((next.log_prob("▁").unwrap().exp() - 1.0 / total).abs() < 1e-12);
        assert!((next.log_prob("a").unwrap().exp() - w1 / total).abs() < 1e-12);
        assert!((next.log_prob("ab").unwrap().exp() - w2 / total).abs() < 1e-12);
    }

    #[test]
    fn prune_at_target_is_noop() {
        let words = WordCounts::from_lines(&["ab ab"]);
        let v = build_seed_vocab(&words, 3, 100, 100).unwrap();
        let v2 = UnigramVocab::from_log_probs(v.pieces.clone(), v.required_chars.clone(), v.len());
        assert_eq!(prune(&v2, &words, 0.5).unwrap(), v2);
    }

    #[test]
    fn prune_drops_unused_piece_first() {
        let words = WordCounts::from_lines(&["ab ab ab"]);
        let v = UnigramVocab::from_log_probs(
            vec![
                ("▁".into(), -1.0),
                ("a".into(), -3.0),
                ("b".into(), -3.0),
                ("▁ab".into(), -1.0),
                ("ba".into(), -40.0),
            ],
            ['▁', 'a', 'b'].into_iter().collect(),
            4,
        );
        let p = prune(&v, &words, 0.9).unwrap();
        assert!(!p.contains("ba"));
        assert!(p.contains("▁ab"));
    }

    #[test]
    fn train_to_character_set() {
        let v = train_unigram(&["abc cab bca abc"], 4, &TrainerOptions::default()).unwrap();
        let mut got: Vec<&str> = v.pieces().iter().map(|(p, _)| p.as_str()).collect();
        got.sort();
        assert_eq!(got, vec!["a", "b", "c", "▁"]);
    }

    #[test]
    fn target_too_small() {
        assert!(matches!(
            train_unigram(&["abc"], 2, &TrainerOptions::default()),
            Err(TokenizerError::TargetTooSmall { target: 2, chars: 4 })
        ));
        let empty: [&str; 1] = ["   "];
        assert!(matches!(
            train_unigram(&empty, 10, &TrainerOptions::default()),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn presets() {
        assert_eq!(VocabPreset::TamilLatin.size(), 8000);
        assert_eq!(VocabPreset::MalayalamLatin.size(), 15000);
        assert_eq!(VocabPreset::MalayalamMixed.size(), 25000);
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let v = vocab(&[
            ("▁", 0.1),
            ("a", 0.1),
            ("b", 0.1),
            ("▁ab", 0.1),
            ("ab", 0.1),
            ("ba", 0.1),
            ("c", 0.1),
            ("▁c", 0.1),
            ("ca", 0.1),
            ("abc", 0.1),
        ]);
        let back = UnigramVocab::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        for ((_, a), (_, b)) in back.pieces().iter().zip(v.pieces()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.fingerprint(), v.fingerprint());
        assert!(matches!(
            UnigramVocab::from_tsv("a\t-1\nb -2\n"),
            Err(TokenizerError::MalformedVocabRow(2))
        ));
        assert!(matches!(
            UnigramVocab::from_tsv("a\t0.5\n"),
            Err(TokenizerError::MalformedVocabRow(1))
        ));
    }
}
