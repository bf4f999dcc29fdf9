//! Key-recall probe: a key hidden in filler text must be reproduced after
//! a query marker.
//!
//! A trial is `filler, KEY, k_1..k_n, filler, QUERY` padded to exactly
//! `context_length` tokens, after which `n` tokens are decoded greedily.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::model::{Grammar, Markers, RotaryTable, ToyModel, START_STATE};
use crate::rope::ScalingFactors;

pub const DEFAULT_TRIALS: usize = 50;

/// Produces the next token for a context.
pub trait GreedyDecoder: Sync {
    fn next_token(&self, context: &[u32]) -> Result<u32, EvalError>;
}

/// Greedy argmax decoding from a toy model under fixed factors.
pub struct ModelDecoder<'a> {
    model: &'a ToyModel<f32>,
    table: RotaryTable<f32>,
}

impl<'a> ModelDecoder<'a> {
    pub fn new(
        model: &'a ToyModel<f32>,
        factors: &ScalingFactors,
        max_len: usize,
    ) -> Result<Self, EvalError> {
        Ok(Self {
            model,
            table: model.rotary(factors, max_len)?,
        })
    }
}

impl GreedyDecoder for ModelDecoder<'_> {
    fn next_token(&self, context: &[u32]) -> Result<u32, EvalError> {
        let logits = self.model.next_token_logits(&self.table, context)?;
        // first maximum wins
        let mut best = 0;
        for (i, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = i;
            }
        }
        Ok(best as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PasskeyOptions {
    pub context_length: usize,
    pub n_trials: usize,
    pub key_length: usize,
    pub seed: u64,
    /// Score the fraction of key tokens recovered instead of exact match.
    pub partial_credit: bool,
}

impl Default for PasskeyOptions {
    fn default() -> Self {
        Self {
            context_length: 256,
            n_trials: DEFAULT_TRIALS,
            key_length: 1,
            seed: 0,
            partial_credit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasskeyResult {
    pub recall_rate: f64,
    pub successes: usize,
    pub n_trials: usize,
}

/// Builds one trial prompt and its key.
pub fn build_trial(
    grammar: &Grammar,
    context_length: usize,
    key_length: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<u32>, Vec<u32>), EvalError> {
    let markers = grammar.markers();
    if context_length < key_length + 2 || key_length == 0 {
        return Err(EvalError::ContextTooShort {
            context: context_length,
            key_length,
        });
    }
    let n = markers.symbols as u32;
    let key: Vec<u32> = (0..key_length).map(|_| rng.random_range(0..n)).collect();
    let key_at = rng.random_range(0..=context_length - key_length - 2);
    let (p2, p1) = START_STATE;
    let mut prompt = grammar.filler(key_at, p2, p1, rng);
    let (c2, c1) = match prompt.as_slice() {
        [.., a, b] => (*a, *b),
        [b] => (p1, *b),
        [] => (p2, p1),
    };
    prompt.push(markers.key);
    prompt.extend_from_slice(&key);
    let rest = context_length - prompt.len() - 1;
    prompt.extend(grammar.filler(rest, c2, c1, rng));
    prompt.push(markers.query);
    debug_assert_eq!(prompt.len(), context_length);
    Ok((prompt, key))
}

/// Runs `n_trials` key-recall trials and returns the recall rate.
///
/// Trials are generated sequentially from `seed` and decoded in parallel;
/// the result does not depend on scheduling.
pub fn passkey_suite(
    decoder: &dyn GreedyDecoder,
    grammar: &Grammar,
    opts: &PasskeyOptions,
) -> Result<PasskeyResult, EvalError> {
    if Markers::for_vocab(grammar.spec().vocab_size).is_none() {
        return Err(EvalError::MissingMarkers {
            vocab: grammar.spec().vocab_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let trials: Vec<(Vec<u32>, Vec<u32>)> = (0..opts.n_trials)
        .map(|_| build_trial(grammar, opts.context_length, opts.key_length, &mut rng))
        .collect::<Result<_, _>>()?;
    let scores: Vec<f64> = trials
        .par_iter()
        .map(|(prompt, key)| {
            let mut context = prompt.clone();
            let mut hits = 0;
            for &expected in key {
                let next = decoder.next_token(&context)?;
                if next == expected {
                    hits += 1;
                } else if !opts.partial_credit {
                    return Ok(0.0);
                }
                context.push(next);
            }
            Ok(if opts.partial_credit {
                hits as f64 / key.len() as f64
            } else {
                1.0
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let successes = scores.iter().filter(|&&s| s == 1.0).count();
    let recall_rate = if opts.n_trials == 0 {
        0.0
    } else {
        scores.iter().sum::<f64>() / opts.n_trials as f64
    };
    Ok(PasskeyResult {
        recall_rate,
        successes,
        n_trials: opts.n_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GrammarSpec;
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Finds the key after the KEY marker and copies it.
    struct Copier(Markers);

    impl GreedyDecoder for Copier {
        fn next_token(&self, context: &[u32]) -> Result<u32, EvalError> {
            let key_at = context.iter().position(|&t| t == self.0.key).unwrap();
            let query_at = context.iter().position(|&t| t == self.0.query).unwrap();
            let produced = context.len() - query_at - 1;
            Ok(context[key_at + 1 + produced])
        }
    }

    /// Emits pseudo-random ordinary symbols.
    struct Guesser(AtomicU64);

    impl GreedyDecoder for Guesser {
        fn next_token(&self, _: &[u32]) -> Result<u32, EvalError> {
            let s = self.0.fetch_add(1, Ordering::Relaxed);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            Ok(rng.random_range(0..60))
        }
    }

    fn grammar() -> Grammar {
        Grammar::new(GrammarSpec::default()).unwrap()
    }

    #[test]
    fn trial_layout() {
        let g = grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (prompt, key) = build_trial(&g, 256, 4, &mut rng).unwrap();
            assert_eq!(prompt.len(), 256);
            assert_eq!(*prompt.last().unwrap(), 61);
            let k = prompt.iter().position(|&t| t == 60).unwrap();
            assert_eq!(&prompt[k + 1..k + 5], key.as_slice());
            assert_eq!(prompt.iter().filter(|&&t| t >= 60).count(), 2);
        }
        assert!(build_trial(&g, 5, 4, &mut rng).is_err());
        build_trial(&g, 6, 4, &mut rng).unwrap();
    }

    #[test]
    fn copier_recalls_everything() {
        let g = grammar();
        let r = passkey_suite(&Copier(g.markers()), &g, &PasskeyOptions::default()).unwrap();
        assert_eq!(r.recall_rate, 1.0);
        assert_eq!(r.successes, 50);
    }

    #[test]
    fn guessing_recalls_nothing() {
        // (1/60)^4 per trial: 50 trials all fail with overwhelming probability
        let g = grammar();
        let opts = PasskeyOptions {
            key_length: 4,
            ..Default::default()
        };
        let r = passkey_suite(&Guesser(AtomicU64::new(0)), &g, &opts).unwrap();
        assert_eq!(r.successes, 0);
        assert_eq!(r.n_trials, 50);
    }

    #[test]
    fn partial_credit_counts_tokens() {
        struct FirstOnly(Copier);
        impl GreedyDecoder for FirstOnly {
            fn next_token(&self, c: &[u32]) -> Result<u32, EvalError> {
                let t = self.0.next_token(c)?;
                let q = c.iter().position(|&x| x == self.0 .0.query).unwrap();
                Ok(if c.len() == q + 1 { t } else { (t + 1) % 60 })
            }
        }
        let g = grammar();
        let dec = FirstOnly(Copier(g.markers()));
        let opts = PasskeyOptions {
            n_trials: 10,
            key_length: 4,
            partial_credit: true,
            ..Default::default()
        };
        let r = passkey_suite(&dec, &g, &opts).unwrap();
        assert!((r.recall_rate - 0.25).abs() < 1e-12);
        assert_eq!(r.successes, 0);
    }

    #[test]
    fn tiny_vocab_has_no_markers() {
        let spec = GrammarSpec {
            vocab_size: 5,
            ..Default::default()
        };
        assert!(Grammar::new(spec).is_err());
    }
}
