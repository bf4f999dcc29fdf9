//! Token corpora: a seeded order-2 Markov grammar with embedded key-recall
//! episodes, or sequences read from a file.
//!
//! The last four vocabulary ids are reserved. `vocab - 4` marks the start
//! of a key, `vocab - 3` asks for it back; the remaining two are unused.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ModelError;
use crate::io::write_atomic;

pub const RESERVED_TOKENS: usize = 4;

/// Marker tokens for a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Markers {
    pub key: u32,
    pub query: u32,
    /// Ordinary symbols are `0..symbols`.
    pub symbols: usize,
}

impl Markers {
    /// `None` when the vocabulary is too small to hold the reserved ids and
    /// at least two ordinary symbols.
    pub fn for_vocab(vocab_size: usize) -> Option<Self> {
        if vocab_size < RESERVED_TOKENS + 2 {
            return None;
        }
        let symbols = vocab_size - RESERVED_TOKENS;
        Some(Self {
            key: symbols as u32,
            query: symbols as u32 + 1,
            symbols,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarSpec {
    pub vocab_size: usize,
    /// Seeds the transition table; streams with different seeds share it.
    pub seed: u64,
    /// Number of possible successors of each two-symbol context.
    pub branching: usize,
    /// Probability of starting a recall episode at any position.
    pub recall_prob: f64,
    pub key_length: usize,
    pub min_gap: usize,
    pub max_gap: usize,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            seed: 0,
            branching: 3,
            recall_prob: 0.2,
            key_length: 1,
            min_gap: 0,
            max_gap: 40,
        }
    }
}

/// Chain state every document opens from. Without a shared opening the toy
/// model does not learn the recall pattern in any reasonable step budget.
pub const START_STATE: (u32, u32) = (0, 1);

/// Order-2 Markov chain over the ordinary symbols.
#[derive(Debug, Clone)]
pub struct Grammar {
    spec: GrammarSpec,
    markers: Markers,
    /// `successors[a * symbols + b]` lists `(next, cumulative probability)`.
    successors: Vec<Vec<(u32, f64)>>,
}

impl Grammar {
    pub fn new(spec: GrammarSpec) -> Result<Self, ModelError> {
        let markers = Markers::for_vocab(spec.vocab_size).ok_or_else(|| {
            ModelError::Config(format!(
                "vocab_size {} leaves no ordinary symbols",
                spec.vocab_size
            ))
        })?;
        if spec.branching == 0 || spec.branching > markers.symbols {
            return Err(ModelError::Config(format!(
                "branching must be in 1..={}",
                markers.symbols
            )));
        }
        if spec.min_gap > spec.max_gap || !(0.0..=1.0).contains(&spec.recall_prob) {
            return Err(ModelError::Config(
                "invalid recall episode parameters".into(),
            ));
        }
        let n = markers.symbols;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut successors = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            let mut picks: Vec<u32> = Vec::with_capacity(spec.branching);
            while picks.len() < spec.branching {
                let s = rng.random_range(0..n as u32);
                if !picks.contains(&s) {
                    picks.push(s);
                }
            }
            // geometric-ish weights 1, 1/2, 1/4, ...
            let weights: Vec<f64> = (0..spec.branching).map(|i| 0.5f64.powi(i as i32)).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            successors.push(
                picks
                    .into_iter()
                    .zip(weights)
                    .map(|(s, w)| {
                        acc += w / total;
                        (s, acc)
                    })
                    .collect(),
            );
        }
        Ok(Self {
            spec,
            markers,
            successors,
        })
    }

    pub fn spec(&self) -> &GrammarSpec {
        &self.spec
    }

    pub fn markers(&self) -> Markers {
        self.markers
    }

    pub fn next_symbol(&self, prev2: u32, prev1: u32, rng: &mut impl Rng) -> u32 {
        let row = &self.successors[prev2 as usize * self.markers.symbols + prev1 as usize];
        let u: f64 = rng.random();
        row.iter()
            .find(|(_, cum)| u < *cum)
            .map_or(row[row.len() - 1].0, |(s, _)| *s)
    }

    /// Plain Markov filler of `len` symbols continuing from `(prev2, prev1)`.
    pub fn filler(
        &self,
        len: usize,
        mut prev2: u32,
        mut prev1: u32,
        rng: &mut impl Rng,
    ) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let s = self.next_symbol(prev2, prev1, rng);
            out.push(s);
            prev2 = prev1;
            prev1 = s;
        }
        out
    }

    /// Log-uniform over `min_gap..=max_gap`: short episodes are common,
    /// which is what lets a small model pick up the recall pattern at all.
    fn gap(&self, rng: &mut impl Rng) -> usize {
        let span = (self.spec.max_gap - self.spec.min_gap + 1) as f64;
        let offset = (rng.random::<f64>() * span.ln()).exp().floor() as usize - 1;
        self.spec.min_gap + offset.min(self.spec.max_gap - self.spec.min_gap)
    }

    /// A document of `len` tokens with recall episodes mixed in. The chain
    /// resumes from the last two ordinary symbols, so key tokens also seed
    /// the filler that follows them.
    pub fn generate(&self, len: usize, stream_seed: u64) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let n = self.markers.symbols as u32;
        let mut out = Vec::with_capacity(len);
        let (mut p2, mut p1) = START_STATE;
        // pending (position to emit the query at, key)
        let mut pending: Option<(usize, Vec<u32>)> = None;
        while out.len() < len {
            let emitted: Vec<u32> = match pending.take() {
                Some((at, key)) if out.len() >= at => {
                    out.push(self.markers.query);
                    key
                }
                Some(p) => {
                    pending = Some(p);
                    vec![self.next_symbol(p2, p1, &mut rng)]
                }
                None if rng.random::<f64>() < self.spec.recall_prob => {
                    let key: Vec<u32> = (0..self.spec.key_length)
                        .map(|_| rng.random_range(0..n))
                        .collect();
                    out.push(self.markers.key);
                    let gap = self.gap(&mut rng);
                    pending = Some((out.len() + key.len() + gap, key.clone()));
                    key
                }
                None => vec![self.next_symbol(p2, p1, &mut rng)],
            };
            for s in emitted {
                out.push(s);
                p2 = p1;
                p1 = s;
            }
        }
        out.truncate(len);
        out
    }
}

/// Token sequences over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab_size: usize,
    sequences: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn from_sequences(vocab_size: usize, sequences: Vec<Vec<u32>>) -> Result<Self, ModelError> {
        for (i, seq) in sequences.iter().enumerate() {
            if let Some(p) = seq.iter().position(|&t| t as usize >= vocab_size) {
                return Err(ModelError::Config(format!(
                    "sequence {i} token {} at {p} exceeds vocab {vocab_size}",
                    seq[p]
                )));
            }
        }
        Ok(Self {
            vocab_size,
            sequences,
        })
    }

    /// Synthetic documents of `doc_len` tokens, at least `tokens` in total.
    pub fn synthetic(grammar: &Grammar, tokens: usize, doc_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = tokens.div_ceil(doc_len.max(1));
        Self {
            vocab_size: grammar.spec.vocab_size,
            sequences: (0..docs)
                .map(|_| grammar.generate(doc_len, rng.random()))
                .collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_tokens() == 0
    }

    /// Hex SHA-256 over the vocabulary size and every sequence.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vocab_size as u64).to_le_bytes());
        for seq in &self.sequences {
            h.update((seq.len() as u64).to_le_bytes());
            for t in seq {
                h.update(t.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Draws a random window of `len` tokens from a sequence long enough to
    /// hold it.
    pub fn sample_window<'a>(
        &'a self,
        len: usize,
        rng: &mut impl Rng,
    ) -> Result<&'a [u32], ModelError> {
        let eligible: Vec<&Vec<u32>> = self.sequences.iter().filter(|s| s.len() >= len).collect();
        if eligible.is_empty() || len == 0 {
            return Err(ModelError::EmptyCorpus(len));
        }
        let seq = eligible[rng.random_range(0..eligible.len())];
        let start = rng.random_range(0..=seq.len() - len);
        Ok(&seq[start..start + len])
    }

    /// `count` windows of `len` tokens drawn with a fixed seed.
    pub fn windows(
        &self,
        count: usize,
        len: usize,
        seed: u64,
    ) -> Result<Vec<Vec<u32>>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| self.sample_window(len, &mut rng).map(<[u32]>::to_vec))
            .collect()
    }

    /// The first `len` tokens of each of the first `count` sequences long
    /// enough to hold them.
    pub fn prefixes(&self, count: usize, len: usize) -> Result<Vec<Vec<u32>>, ModelError> {
        let out: Vec<Vec<u32>> = self
            .sequences
            .iter()
            .filter(|s| s.len() >= len)
            .take(count)
            .map(|s| s[..len].to_vec())
            .collect();
        if out.len() < count || len == 0 {
            return Err(ModelError::EmptyCorpus(len));
        }
        Ok(out)
    }

    /// Splits every sequence at `fraction` of its length into (head, tail).
    pub fn split(&self, fraction: f64) -> (Self, Self) {
        let (mut head, mut tail) = (Vec::new(), Vec::new());
        for s in &self.sequences {
            let cut = ((s.len() as f64) * fraction).round() as usize;
            let cut = cut.min(s.len());
            head.push(s[..cut].to_vec());
            tail.push(s[cut..].to_vec());
        }
        (
            Self {
                vocab_size: self.vocab_size,
                sequences: head,
            },
            Self {
                vocab_size: self.vocab_size,
                sequences: tail,
            },
        )
    }

    /// Reads one sequence per line, token ids separated by whitespace.
    pub fn load(path: &Path, vocab_size: usize) -> Result<Self, ModelError> {
        let err = |msg: String| ModelError::CorpusFile {
            path: path.to_path_buf(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>()
                        .map_err(|e| err(format!("line {}: {tok:?}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            sequences.push(seq);
        }
        Self::from_sequences(vocab_size, sequences).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut text = String::new();
        for seq in &self.sequences {
            let line: Vec<String> = seq.iter().map(u32::to_string).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
        write_atomic(path, text.as_bytes()).map_err(|e| ModelError::CorpusFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_respects_vocab_and_seed() {
        let g = Grammar::new(GrammarSpec::default()).unwrap();
        let a = g.generate(5000, 1);
        assert_eq!(a.len(), 5000);
        assert!(a.iter().all(|&t| (t as usize) < 62));
        assert_eq!(a, g.generate(5000, 1));
        assert_ne!(a, g.generate(5000, 2));
        // documents open from the shared chain state
        let (p2, p1) = START_STATE;
        let row = &g.successors[(p2 * 60 + p1) as usize];
        for seed in 0..50 {
            let d = g.generate(8, seed);
            assert!(d[0] == g.markers().key || row.iter().any(|&(s, _)| s == d[0]));
        }
    }

    #[test]
    fn queries_repeat_their_keys() {
        let g = Grammar::new(GrammarSpec {
            key_length: 4,
            ..Default::default()
        })
        .unwrap();
        let m = g.markers();
        let s = g.generate(20_000, 3);
        let mut checked = 0;
        for (i, &t) in s.iter().enumerate() {
            if t == m.query && i + 5 <= s.len() {
                let key_at = s[..i].iter().rposition(|&x| x == m.key).unwrap();
                assert_eq!(&s[key_at + 1..key_at + 5], &s[i + 1..i + 5]);
                let gap = i - (key_at + 5);
                assert!((0..=40).contains(&gap), "gap {gap}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("corpus.txt");
        let c = Corpus::from_sequences(10, vec![vec![1, 2, 3], vec![9, 0]]).unwrap();
        c.save(&p).unwrap();
        let back = Corpus::load(&p, 10).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
        assert!(Corpus::load(&p, 5).is_err());
        fs::write(&p, "1 2 x\n").unwrap();
        assert!(matches!(
            Corpus::load(&p, 10),
            Err(ModelError::CorpusFile { .. })
        ));
    }

    #[test]
    fn windows_are_seeded() {
        let g = Grammar::new(GrammarSpec::default()).unwrap();
        let c = Corpus::synthetic(&g, 1000, 100, 0);
        assert_eq!(c.sequences().len(), 10);
        assert!(c.sequences().iter().all(|d| d.len() == 100));
        assert_eq!(c, Corpus::synthetic(&g, 1000, 100, 0));
        let w = c.windows(5, 64, 9).unwrap();
        assert_eq!(w, c.windows(5, 64, 9).unwrap());
        assert!(w.iter().all(|x| x.len() == 64));
        assert!(c.windows(1, 101, 0).is_err());
        let p = c.prefixes(3, 40).unwrap();
        assert_eq!(p[2], c.sequences()[2][..40]);
        assert!(c.prefixes(11, 40).is_err());
    }

    #[test]
    fn markers_need_room() {
        assert!(Markers::for_vocab(5).is_none());
        let m = Markers::for_vocab(64).unwrap();
        assert_eq!((m.key, m.query, m.symbols), (60, 61, 60));
    }
}
