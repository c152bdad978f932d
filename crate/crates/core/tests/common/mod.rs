//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod grad;
pub mod pipeline;

use std::collections::BTreeSet;

use codemix::rng::RngStream;
use codemix::tokenizer::{UnigramVocab, WORD_BOUNDARY};
use rustc_hash::FxHashMap;

pub const ALPHABET: [char; 3] = ['a', 'b', 'c'];

/// Random vocabulary over `a`, `b`, `c` and the boundary marker: every single
/// character plus up to `extra` random multi-character pieces, with random
/// weights.
pub fn random_toy_vocab(rng: &mut RngStream, extra: usize) -> UnigramVocab {
    let mut pieces: BTreeSet<String> = ALPHABET.iter().map(|c| c.to_string()).collect();
    pieces.insert(WORD_BOUNDARY.to_string());
    for _ in 0..extra {
        let mut p = String::new();
        let len = if rng.uniform() < 0.5 {
            p.push(WORD_BOUNDARY);
            1 + rng.below(3)
        } else {
            2 + rng.below(3)
        };
        for _ in 0..len {
            p.push(ALPHABET[rng.below(3)]);
        }
        pieces.insert(p);
    }
    let weighted = pieces.into_iter().map(|p| (p, rng.uniform_range(0.01, 1.0).ln())).collect();
    let chars = ALPHABET.iter().copied().chain([WORD_BOUNDARY]).collect();
    UnigramVocab::from_log_probs(weighted, chars, 0)
}

/// Every string over [`ALPHABET`] of length `1..=max_len`.
pub fn all_strings(max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut layer = vec![String::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| ALPHABET.iter().map(move |c| format!("{s}{c}")))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Pieces as character vectors with their log-probabilities.
pub fn char_pieces(v: &UnigramVocab) -> Vec<(Vec<char>, f64)> {
    v.pieces().iter().map(|(p, lp)| (p.chars().collect(), *lp)).collect()
}

/// Best total log-probability over every segmentation of `word`, found by
/// enumerating all of them. `None` if no segmentation exists.
pub fn brute_force_best(pieces: &[(Vec<char>, f64)], word: &[char]) -> Option<f64> {
    fn go(pieces: &[(Vec<char>, f64)], rest: &[char], acc: f64, best: &mut Option<f64>) {
        if rest.is_empty() {
            if best.map_or(true, |b| acc > b) {
                *best = Some(acc);
            }
            return;
        }
        for (p, lp) in pieces {
            if rest.starts_with(p) {
                go(pieces, &rest[p.len()..], acc + lp, best);
            }
        }
    }
    let mut best = None;
    go(pieces, word, 0.0, &mut best);
    best
}

/// `(weighted precision, weighted recall, weighted F1)` written straight from
/// the definitions, one class at a time.
pub fn brute_force_weighted(golds: &[u8], preds: &[u8]) -> (f64, f64, f64) {
    let labels: BTreeSet<u8> = golds.iter().chain(preds).copied().collect();
    let n = golds.len() as f64;
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in labels {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        let mut support = 0.0;
        for (&g, &p) in golds.iter().zip(preds) {
            if g == c && p == c {
                tp += 1.0;
            }
            if p == c {
                predicted += 1.0;
            }
            if g == c {
                support += 1.0;
            }
        }
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        wp += support / n * precision;
        wr += support / n * recall;
        wf += support / n * f1;
    }
    (wp, wr, wf)
}

/// Random row-stochastic matrix with every entry at least `floor`.
pub fn random_ergodic(rng: &mut RngStream, floor: f64) -> [f64; 9] {
    let mut p = [0.0; 9];
    for r in 0..3 {
        let w: Vec<f64> = (0..3).map(|_| floor + rng.uniform()).collect();
        let s: f64 = w.iter().sum();
        for c in 0..3 {
            p[3 * r + c] = w[c] / s;
        }
    }
    // Absorb rounding into the last entry of each row.
    for r in 0..3 {
        p[3 * r + 2] = 1.0 - p[3 * r] - p[3 * r + 1];
    }
    p
}

/// Transition counts `counts[a][b]` over consecutive states.
pub fn transition_counts(states: &[usize]) -> [[u64; 3]; 3] {
    let mut counts = [[0u64; 3]; 3];
    for w in states.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    counts
}

/// Runs `f` over `items` on all cores; results come back in input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// The bundled parallel fixture synthesized with the bundled mixing matrix.
pub fn fixture_synthetic() -> Vec<String> {
    use codemix::corpus::{load_parallel_corpus, CorpusFormat};
    use codemix::fixtures::{fixture_dir, FIXTURE_SEED, MIXING_MATRIX};
    use codemix::markov::{sample_states, synthesize, MixState, TransitionMatrix};
    let corpus = load_parallel_corpus(fixture_dir().join("parallel.jsonl"), CorpusFormat::Jsonl).unwrap();
    let m = TransitionMatrix::new(MIXING_MATRIX).unwrap();
    let states = sample_states(&m, MixState::Native, corpus.len(), FIXTURE_SEED).unwrap();
    synthesize(&corpus, &states).unwrap()
}

/// Best score of every marker-prefixed word of at most `max_chars`
/// characters (marker included), found by walking every concatenation of
/// pieces once. Only the first piece of a word may carry the marker.
pub fn brute_force_table(pieces: &[(Vec<char>, f64)], max_chars: usize) -> FxHashMap<String, f64> {
    fn go(pieces: &[(String, usize, bool, f64)], room: usize, word: &mut String, acc: f64, table: &mut FxHashMap<String, f64>) {
        if !word.is_empty() {
            let best = table.entry(word.clone()).or_insert(f64::NEG_INFINITY);
            *best = best.max(acc);
        }
        for &(ref p, len, first, lp) in pieces {
            if len > room || word.is_empty() != first {
                continue;
            }
            word.push_str(p);
            go(pieces, room - len, word, acc + lp, table);
            word.truncate(word.len() - p.len());
        }
    }
    // Pieces with the marker anywhere but the front can never be used.
    let usable: Vec<(String, usize, bool, f64)> = pieces
        .iter()
        .filter(|(p, _)| !p[1..].contains(&WORD_BOUNDARY))
        .map(|(p, lp)| (p.iter().collect(), p.len(), p[0] == WORD_BOUNDARY, *lp))
        .collect();
    let mut table = FxHashMap::default();
    go(&usable, max_chars, &mut String::new(), 0.0, &mut table);
    table
}

/// Words in `texts` where the Viterbi score differs from the exhaustive best,
/// or from the sum of its own pieces' log-probabilities.
pub fn viterbi_mismatches(v: &UnigramVocab, texts: &[String]) -> usize {
    use codemix::tokenizer::viterbi_encode;
    let longest = texts.iter().map(|t| t.chars().count()).max().unwrap_or(0);
    let table = brute_force_table(&char_pieces(v), longest + 1);
    texts
        .iter()
        .filter(|t| {
            let seg = viterbi_encode(v, t);
            let best = table[&format!("{WORD_BOUNDARY}{t}")];
            let own: f64 = seg
                .ids
                .iter()
                .map(|&id| v.log_prob(&v.piece_str(id).unwrap()).unwrap())
                .sum();
            (seg.score - best).abs() > 1e-9 || (own - seg.score).abs() > 1e-9
        })
        .count()
}
