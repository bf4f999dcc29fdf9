use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::real::Real;
use super::transformer::ToyModel;
use crate::error::ModelError;
use crate::rope::ScalingFactors;

pub const DEFAULT_PRETRAIN_LR: f64 = 3e-4;
pub const DEFAULT_FINETUNE_LR: f64 = 2e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub context_len: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_steps: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: DEFAULT_PRETRAIN_LR,
            batch_size: 32,
            context_len: 64,
            seed: 0,
            grad_clip: Some(1.0),
            beta1: 0.9,
            beta2: 0.99,
            warmup_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::from_f64_lossy(lr * c2.sqrt() / c1);
        let eps = T::from_f64_lossy(self.eps * c2.sqrt());
        let one = T::one();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Pre-training at identity scaling. `context_len` may not exceed the
/// model's trained context.
pub fn train<T: Real>(
    model: &mut ToyModel<T>,
    corpus: &Corpus,
    opts: &TrainOptions,
    on_step: impl FnMut(StepLoss),
) -> Result<Vec<StepLoss>, ModelError> {
    if opts.context_len > model.config().trained_context {
        return Err(ModelError::Training(format!(
            "context_len {} exceeds trained_context {}",
            opts.context_len,
            model.config().trained_context
        )));
    }
    let ones = ScalingFactors::ones(model.config().num_pairs());
    run(model, &ones, corpus, opts, on_step)
}

/// Continues training with `factors` installed in every attention layer.
pub fn finetune_with_factors<T: Real>(
    model: &mut ToyModel<T>,
    factors: &ScalingFactors,
    corpus: &Corpus,
    opts: &TrainOptions,
    on_step: impl FnMut(StepLoss),
) -> Result<Vec<StepLoss>, ModelError> {
    run(model, factors, corpus, opts, on_step)
}

fn run<T: Real>(
    model: &mut ToyModel<T>,
    factors: &ScalingFactors,
    corpus: &Corpus,
    opts: &TrainOptions,
    mut on_step: impl FnMut(StepLoss),
) -> Result<Vec<StepLoss>, ModelError> {
    if opts.batch_size == 0 || opts.context_len < 2 {
        return Err(ModelError::Training(
            "batch_size must be >= 1 and context_len >= 2".into(),
        ));
    }
    if !(opts.learning_rate > 0.0) {
        return Err(ModelError::Training(
            "learning_rate must be positive".into(),
        ));
    }
    if corpus.vocab_size() != model.config().vocab_size {
        return Err(ModelError::Training(format!(
            "corpus vocab {} does not match model vocab {}",
            corpus.vocab_size(),
            model.config().vocab_size
        )));
    }
    if opts.steps == 0 {
        return Ok(Vec::new());
    }
    let table = model.rotary(factors, opts.context_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(model.params().len(), opts.beta1, opts.beta2);
    let mut grad = vec![T::zero(); model.params().len()];
    let scale = T::from_f64_lossy(1.0 / (opts.batch_size * (opts.context_len - 1)) as f64);
    let mut history = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let mut total = 0.0;
        for _ in 0..opts.batch_size {
            let window = corpus.sample_window(opts.context_len, &mut rng)?;
            total += model.accumulate_grad(&table, window, scale, &mut grad)?;
        }
        let loss = total / (opts.batch_size * (opts.context_len - 1)) as f64;
        let grad_norm = grad
            .iter()
            .map(|g| g.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(ModelError::Diverged { step, loss });
        }
        if let Some(clip) = opts.grad_clip {
            if grad_norm > clip {
                let s = T::from_f64_lossy(clip / grad_norm);
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = if step < opts.warmup_steps {
            opts.learning_rate * (step + 1) as f64 / opts.warmup_steps as f64
        } else {
            opts.learning_rate
        };
        adam.step(model.params_mut(), &grad, lr);
        let record = StepLoss { step, loss };
        on_step(record);
        history.push(record);
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(ModelError::Diverged {
            step: opts.steps,
            loss: f64::NAN,
        });
    }
    Ok(history)
}
