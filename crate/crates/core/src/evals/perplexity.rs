use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::report::{EvalEntry, EvalReport};
use crate::error::EvalError;
use crate::model::ToyModel;
use crate::rope::ScalingFactors;

/// Mean next-token NLL over every sample truncated to `eval_length`, with
/// full causal attention over the whole window.
///
/// Samples are scored independently (possibly in parallel) and summed in
/// sample order, so the result does not depend on the thread count.
pub fn mean_nll(
    model: &ToyModel<f32>,
    factors: &ScalingFactors,
    samples: &[Vec<u32>],
    eval_length: usize,
) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    if let Some((index, s)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.len() < eval_length)
    {
        return Err(EvalError::SampleTooShort {
            index,
            len: s.len(),
            eval_length,
        });
    }
    let table = model.rotary(factors, eval_length)?;
    let sums: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            model
                .forward_nll_with(&table, &s[..eval_length])
                .map(|nll| nll.iter().sum::<f64>())
        })
        .collect::<Result<_, _>>()?;
    let count = samples.len() * (eval_length - 1);
    Ok(sums.iter().sum::<f64>() / count as f64)
}

/// `exp(mean NLL)`.
pub fn perplexity(
    model: &ToyModel<f32>,
    factors: &ScalingFactors,
    samples: &[Vec<u32>],
    eval_length: usize,
) -> Result<f64, EvalError> {
    mean_nll(model, factors, samples, eval_length).map(f64::exp)
}

/// Perplexity at each of `lengths` (ascending) over the same samples.
pub fn ppl_curve(
    model: &ToyModel<f32>,
    factors: &ScalingFactors,
    samples: &[Vec<u32>],
    lengths: &[usize],
) -> Result<Vec<EvalEntry>, EvalError> {
    if lengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedLengths);
    }
    lengths
        .iter()
        .map(|&length| {
            perplexity(model, factors, samples, length).map(|ppl| EvalEntry::Ppl { length, ppl })
        })
        .collect()
}

/// Hex SHA-256 of a model's config and parameter bytes.
pub fn model_fingerprint(model: &ToyModel<f32>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.config()).expect("config serializes"));
    for p in model.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl EvalReport {
    pub fn from_curve(
        entries: Vec<EvalEntry>,
        model: &ToyModel<f32>,
        factors_provenance: impl Into<String>,
        seed: u64,
    ) -> Self {
        Self {
            entries,
            factors_provenance: factors_provenance.into(),
            model_fingerprint: model_fingerprint(model),
            seed,
            config: None,
        }
    }
}
