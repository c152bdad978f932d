//! Three-state Markov process that decides, sentence by sentence, which
//! parallel variant goes into the synthetic code-mixed corpus.
//!
//! Symbol convention for the nine transition probabilities: `p*` leave
//! `Native`, `q*` leave `Translated`, `r*` leave `Transliterated`; the suffix
//! 1/2/3 names the destination Native/Translated/Transliterated. So
//! `p1,p2,p3,q1,q2,q3,r1,r2,r3` is the row-major 3x3 matrix.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::ParallelCorpus;
use crate::rng::RngStream;

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("row {row} sums to {sum}, expected 1")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("transition probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("expected 9 comma-separated probabilities, got {0}")]
    WrongArity(usize),
    #[error("cannot parse `{0}` as a probability")]
    BadNumber(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("corpus has {corpus_len} triples but the state sequence has {states_len}")]
    LengthMismatch { corpus_len: usize, states_len: usize },
    #[error("need at least two states to count transitions")]
    TooShort,
    #[error("sequence length must be at least 1")]
    EmptySequence,
}

/// Which variant of a sentence triple is emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MixState {
    Native = 0,
    Translated = 1,
    Transliterated = 2,
}

impl MixState {
    pub const ALL: [MixState; 3] = [MixState::Native, MixState::Translated, MixState::Transliterated];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MixState::Native => "native",
            MixState::Translated => "translated",
            MixState::Transliterated => "transliterated",
        }
    }
}

impl fmt::Display for MixState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixState {
    type Err = MarkovError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "native" | "n" => Ok(MixState::Native),
            "translated" | "t" => Ok(MixState::Translated),
            "transliterated" | "x" => Ok(MixState::Transliterated),
            other => Err(MarkovError::UnknownState(other.to_string())),
        }
    }
}

/// Row-stochastic 3x3 matrix; row = source state, column = destination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    rows: [[f64; 3]; 3],
}

impl TransitionMatrix {
    /// Builds the matrix from `p1,p2,p3,q1,q2,q3,r1,r2,r3`.
    pub fn new(p: [f64; 9]) -> Result<Self, MarkovError> {
        for &v in &p {
            if !(0.0..=1.0).contains(&v) {
                return Err(MarkovError::OutOfRange(v));
            }
        }
        let rows = [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]]];
        for (row, r) in rows.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(MarkovError::RowNotStochastic { row, sum });
            }
        }
        Ok(Self { rows })
    }

    pub fn identity() -> Self {
        Self::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap()
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    pub fn prob(&self, from: MixState, to: MixState) -> f64 {
        self.rows[from.index()][to.index()]
    }

    pub fn as_flat(&self) -> [f64; 9] {
        let r = &self.rows;
        [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]]
    }

    /// Stationary distribution by power iteration. Only meaningful for
    /// ergodic matrices.
    pub fn stationary(&self, iterations: usize) -> [f64; 3] {
        let mut pi = [1.0 / 3.0; 3];
        for _ in 0..iterations {
            let mut next = [0.0; 3];
            for (from, row) in self.rows.iter().enumerate() {
                for (to, p) in row.iter().enumerate() {
                    next[to] += pi[from] * p;
                }
            }
            pi = next;
        }
        pi
    }
}

impl FromStr for TransitionMatrix {
    type Err = MarkovError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 9 {
            return Err(MarkovError::WrongArity(parts.len()));
        }
        let mut p = [0.0; 9];
        for (slot, part) in p.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| MarkovError::BadNumber(part.to_string()))?;
        }
        Self::new(p)
    }
}

/// Named matrices from the Malayalam synthesis experiments.
pub mod presets {
    use super::TransitionMatrix;

    /// Native -> Translated, Translated -> Transliterated, Transliterated -> Translated.
    pub fn model_1() -> TransitionMatrix {
        TransitionMatrix::new([0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap()
    }

    /// Native -> Transliterated, Translated and Transliterated absorbing.
    pub fn model_2() -> TransitionMatrix {
        TransitionMatrix::new([0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap()
    }

    pub fn by_name(name: &str) -> Option<TransitionMatrix> {
        match name {
            "model1" | "model-1" | "model_1" => Some(model_1()),
            "model2" | "model-2" | "model_2" => Some(model_2()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSequence {
    states: Vec<MixState>,
    seed: u64,
    initial: MixState,
}

impl StateSequence {
    /// Wraps an explicit sequence (seed recorded as 0).
    pub fn from_states(states: Vec<MixState>) -> Result<Self, MarkovError> {
        let initial = *states.first().ok_or(MarkovError::EmptySequence)?;
        Ok(Self {
            states,
            seed: 0,
            initial,
        })
    }

    pub fn states(&self) -> &[MixState] {
        &self.states
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> MixState {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// One state name per line, for debugging dumps.
    pub fn to_lines(&self) -> Vec<&'static str> {
        self.states.iter().map(|s| s.name()).collect()
    }
}

/// Samples exactly `n` states, the first being `initial`.
pub fn sample_states(
    m: &TransitionMatrix,
    initial: MixState,
    n: usize,
    seed: u64,
) -> Result<StateSequence, MarkovError> {
    if n == 0 {
        return Err(MarkovError::EmptySequence);
    }
    let mut rng = RngStream::new(seed);
    let mut states = Vec::with_capacity(n);
    let mut current = initial;
    states.push(current);
    for _ in 1..n {
        let next = rng.categorical(&m.rows[current.index()]);
        current = MixState::ALL[next];
        states.push(current);
    }
    Ok(StateSequence {
        states,
        seed,
        initial,
    })
}

/// Picks, for each sentence index, the variant named by the state at that index.
pub fn synthesize(corpus: &ParallelCorpus, states: &StateSequence) -> Result<Vec<String>, MarkovError> {
    if corpus.len() != states.len() {
        return Err(MarkovError::LengthMismatch {
            corpus_len: corpus.len(),
            states_len: states.len(),
        });
    }
    Ok(corpus
        .triples()
        .iter()
        .zip(states.states())
        .map(|(t, s)| t.fields()[s.index()].to_string())
        .collect())
}

/// Row-normalised transition counts; rows without outgoing transitions are zero.
pub fn empirical_transition_frequencies(states: &StateSequence) -> Result<[[f64; 3]; 3], MarkovError> {
    let s = states.states();
    if s.len() < 2 {
        return Err(MarkovError::TooShort);
    }
    let mut counts = [[0usize; 3]; 3];
    for w in s.windows(2) {
        counts[w[0].index()][w[1].index()] += 1;
    }
    let mut freq = [[0.0; 3]; 3];
    for (row, c) in counts.iter().enumerate() {
        let total: usize = c.iter().sum();
        if total > 0 {
            for col in 0..3 {
                freq[row][col] = c[col] as f64 / total as f64;
            }
        }
    }
    Ok(freq)
}

/// Fraction of time spent in each state.
pub fn visit_frequencies(states: &StateSequence) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for s in states.states() {
        counts[s.index()] += 1;
    }
    counts.map(|c| c as f64 / states.len().max(1) as f64)
}
