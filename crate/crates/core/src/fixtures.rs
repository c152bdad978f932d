//! Deterministic synthetic data for tests, examples and the bundled
//! `fixtures/` directory.
//!
//! Sentences are drawn from a small word-aligned lexicon of Malayalam (native
//! script), English, and romanized Malayalam. The labeled set is separable by
//! construction: an example is offensive exactly when it contains one of
//! [`OFFENSIVE_KEYWORDS`] (in either script).

use crate::corpus::{CorpusError, ParallelCorpus, SentenceTriple};
use crate::rng::RngStream;
use crate::textprep::{Label, LabeledExample};

/// Seed the bundled `fixtures/` files were generated with.
pub const FIXTURE_SEED: u64 = 7;
pub const PARALLEL_SIZE: usize = 2000;
pub const LABELED_SIZE: usize = 2000;
/// Mixing matrix for the bundled pipeline: every variant reachable from every
/// other, with a mild preference to stay.
pub const MIXING_MATRIX: [f64; 9] = [0.4, 0.3, 0.3, 0.3, 0.4, 0.3, 0.3, 0.3, 0.4];

/// Directory holding the bundled fixture files.
pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// `(english, native, romanized)`.
pub const LEXICON: &[(&str, &str, &str)] = &[
    ("i", "ഞാൻ", "njan"),
    ("you", "നീ", "nee"),
    ("this", "ഇത്", "ithu"),
    ("movie", "സിനിമ", "cinema"),
    ("good", "നല്ല", "nalla"),
    ("bad", "മോശം", "mosham"),
    ("song", "പാട്ട്", "paattu"),
    ("very", "വളരെ", "valare"),
    ("is", "ആണ്", "aanu"),
    ("house", "വീട്", "veedu"),
    ("water", "വെള്ളം", "vellam"),
    ("friend", "സുഹൃത്ത്", "suhruthu"),
    ("today", "ഇന്ന്", "innu"),
    ("tomorrow", "നാളെ", "naale"),
    ("come", "വരൂ", "varoo"),
    ("love", "സ്നേഹം", "sneham"),
    ("beautiful", "മനോഹരം", "manoharam"),
    ("big", "വലിയ", "valiya"),
    ("small", "ചെറിയ", "cheriya"),
    ("rain", "മഴ", "mazha"),
    ("sea", "കടൽ", "kadal"),
    ("book", "പുസ്തകം", "pusthakam"),
    ("mother", "അമ്മ", "amma"),
    ("father", "അച്ഛൻ", "achan"),
    ("food", "ഭക്ഷണം", "bhakshanam"),
    ("hero", "നായകൻ", "nayakan"),
    ("story", "കഥ", "katha"),
    ("all", "എല്ലാം", "ellam"),
    ("nice", "കൊള്ളാം", "kollam"),
    ("new", "പുതിയ", "puthiya"),
    ("trailer", "ട്രെയിലർ", "trailer"),
    ("watch", "കാണുക", "kaanuka"),
    ("and", "പിന്നെ", "pinne"),
    ("not", "അല്ല", "alla"),
    ("fool", "മണ്ടൻ", "mandan"),
    ("get-lost", "പോടാ", "poda"),
    ("disgusting", "വൃത്തികെട്ട", "vrithiketta"),
];

/// Lexicon rows whose words mark an example as offensive.
pub const OFFENSIVE_KEYWORDS: &[&str] = &["fool", "get-lost", "disgusting"];

fn is_keyword(row: &(&str, &str, &str)) -> bool {
    OFFENSIVE_KEYWORDS.contains(&row.0)
}

/// Each lexicon row's successors: a fixed sparse word-level chain, so that a
/// word predicts its neighbours the way real text does.
const SUCCESSORS: usize = 4;

fn successor_table() -> Vec<[usize; SUCCESSORS]> {
    let mut rng = RngStream::derived(0, "fixtures.grammar");
    (0..LEXICON.len())
        .map(|_| std::array::from_fn(|_| rng.below(LEXICON.len())))
        .collect()
}

fn sentence_rows(table: &[[usize; SUCCESSORS]], rng: &mut RngStream, min: usize, max: usize) -> Vec<usize> {
    let n = min + rng.below(max - min + 1);
    let mut rows = vec![rng.below(LEXICON.len())];
    while rows.len() < n {
        let prev = *rows.last().expect("non-empty");
        // Mostly follow the chain; occasionally jump anywhere.
        let next = if rng.uniform() < 0.9 {
            table[prev][rng.below(SUCCESSORS)]
        } else {
            rng.below(LEXICON.len())
        };
        rows.push(next);
    }
    rows
}

/// `n` word-aligned triples (`n >= 1`).
pub fn parallel_corpus(n: usize, seed: u64) -> Result<ParallelCorpus, CorpusError> {
    let mut rng = RngStream::derived(seed, "fixtures.parallel");
    let table = successor_table();
    let triples = (0..n)
        .map(|_| {
            let rows = sentence_rows(&table, &mut rng, 4, 10);
            let pick = |col: usize| {
                rows.iter()
                    .map(|&r| [LEXICON[r].0, LEXICON[r].1, LEXICON[r].2][col])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            SentenceTriple {
                native: pick(1),
                translated: pick(0),
                transliterated: pick(2),
            }
        })
        .collect();
    ParallelCorpus::new(triples, format!("fixture-parallel-{seed}"))
}

/// Balanced two-class data drawn from the same word chain as
/// [`parallel_corpus`], with social-media noise (mentions, links, capitals,
/// some native-script words).
pub fn labeled_toy(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = RngStream::derived(seed, "fixtures.labeled");
    let table = successor_table();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Offensive } else { Label::NotOffensive };
            let rows = loop {
                let rows = sentence_rows(&table, &mut rng, 4, 12);
                let offensive = rows.iter().any(|&r| is_keyword(&LEXICON[r]));
                if offensive == (label == Label::Offensive) {
                    break rows;
                }
            };
            let native_share = if rng.uniform() < 0.15 { 0.7 } else { 0.05 };
            let mut words: Vec<String> = rows
                .iter()
                .map(|&r| {
                    let (_, native, roman) = LEXICON[r];
                    if rng.uniform() < native_share {
                        native.to_string()
                    } else if rng.uniform() < 0.2 {
                        roman.to_uppercase()
                    } else {
                        roman.to_string()
                    }
                })
                .collect();
            if rng.uniform() < 0.2 {
                words.insert(0, format!("@user{}", rng.below(1000)));
            }
            if rng.uniform() < 0.1 {
                words.push(format!("https://example.com/v/{}", rng.below(10_000)));
            }
            LabeledExample::new(format!("toy-{i:04}"), words.join(" "), label)
        })
        .collect()
}

/// Sentences mixing scripts inside a line, with the occasional symbol outside
/// any trained vocabulary.
pub fn mixed_script_lines(n: usize, seed: u64) -> Vec<String> {
    let mut rng = RngStream::derived(seed, "fixtures.mixed");
    let table = successor_table();
    let extras = ["😀", "!", "?", "…", "ß", "100%"];
    (0..n)
        .map(|_| {
            let rows = sentence_rows(&table, &mut rng, 3, 12);
            let mut words: Vec<String> = rows
                .iter()
                .map(|&r| {
                    let (en, native, roman) = LEXICON[r];
                    match rng.below(3) {
                        0 => en.to_string(),
                        1 => native.to_string(),
                        _ => roman.to_string(),
                    }
                })
                .collect();
            if rng.uniform() < 0.1 {
                words.push(extras[rng.below(extras.len())].to_string());
            }
            words.join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::preprocess;

    #[test]
    fn deterministic() {
        assert_eq!(parallel_corpus(20, 3).unwrap().triples(), parallel_corpus(20, 3).unwrap().triples());
        assert_eq!(labeled_toy(20, 3), labeled_toy(20, 3));
    }

    #[test]
    fn triples_are_word_aligned() {
        for t in parallel_corpus(50, 1).unwrap().triples() {
            let n = t.native.split(' ').count();
            assert_eq!(t.translated.split(' ').count(), n);
            assert_eq!(t.transliterated.split(' ').count(), n);
        }
    }

    #[test]
    fn labels_follow_keywords() {
        let keys: Vec<String> = LEXICON
            .iter()
            .filter(|r| is_keyword(r))
            .flat_map(|r| [r.1.to_string(), r.2.to_string()])
            .collect();
        let data = labeled_toy(200, 9);
        for ex in &data {
            let text = preprocess(&ex.text);
            let has = text.split(' ').any(|w| keys.iter().any(|k| k == w));
            assert_eq!(has, ex.label == Label::Offensive, "{}", ex.text);
        }
        assert_eq!(data.iter().filter(|e| e.label == Label::Offensive).count(), 100);
    }
}
