//! Run configuration: one JSON document with `model`, `training`, `search`
//! and `eval` sections. Every field has a default, so `{}` is valid.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dcis::evals::PasskeyOptions;
use dcis::model::{Corpus, Grammar, GrammarSpec, TrainOptions, DEFAULT_FINETUNE_LR};
use dcis::schemes::{ntk_factors, pi_factors, yarn_factors, DEFAULT_RAMP_HIGH, DEFAULT_RAMP_LOW};
use dcis::search::{DEFAULT_INCREMENTS, DEFAULT_RANGE, DEFAULT_THRESHOLD};
use dcis::{ModelConfig, ScalingFactors};
use serde::{Deserialize, Serialize};

use crate::exit::{self, fail, WithCode};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub search: SearchSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Defaults to the model's trained context.
    pub context_len: Option<usize>,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_steps: usize,
    pub finetune_steps: usize,
    pub finetune_learning_rate: f64,
    pub corpus: CorpusSection,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let o = TrainOptions::default();
        Self {
            steps: o.steps,
            learning_rate: o.learning_rate,
            batch_size: o.batch_size,
            context_len: None,
            seed: o.seed,
            grad_clip: o.grad_clip,
            beta1: o.beta1,
            beta2: o.beta2,
            warmup_steps: o.warmup_steps,
            finetune_steps: 200,
            finetune_learning_rate: DEFAULT_FINETUNE_LR,
            corpus: CorpusSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Newline-delimited token ids. When set, the synthetic grammar only
    /// drives passkey filler and the last `holdout_fraction` of every line
    /// is held out.
    pub file: Option<PathBuf>,
    pub grammar: GrammarSpec,
    pub tokens: usize,
    pub seed: u64,
    pub holdout_tokens: usize,
    pub holdout_seed: u64,
    pub holdout_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            file: None,
            grammar: GrammarSpec::default(),
            tokens: 400_000,
            seed: 1,
            holdout_tokens: 40_000,
            holdout_seed: 2,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Yarn,
    Pi,
    Ntk,
    Ones,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Yarn => "yarn",
            Self::Pi => "pi",
            Self::Ntk => "ntk",
            Self::Ones => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub range: (f64, f64),
    pub increments: usize,
    pub threshold: f64,
    pub init: Scheme,
    /// Extension ratio for the initial factors; defaults to
    /// `target_length / trained_context`.
    pub scale: Option<f64>,
    /// Defaults to four times the trained context.
    pub target_length: Option<usize>,
    pub samples: usize,
    pub sample_seed: u64,
    pub ramp_low: f64,
    pub ramp_high: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            range: DEFAULT_RANGE,
            increments: DEFAULT_INCREMENTS,
            threshold: DEFAULT_THRESHOLD,
            init: Scheme::Yarn,
            scale: None,
            target_length: None,
            samples: 8,
            sample_seed: 7,
            ramp_low: DEFAULT_RAMP_LOW,
            ramp_high: DEFAULT_RAMP_HIGH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ppl,
    Passkey,
    Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metric: Metric,
    pub lengths: Vec<usize>,
    pub samples: usize,
    pub sample_seed: u64,
    pub trials: usize,
    pub key_length: usize,
    pub seed: u64,
    pub partial_credit: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = PasskeyOptions::default();
        Self {
            metric: Metric::Ppl,
            lengths: Vec::new(),
            samples: 8,
            sample_seed: 7,
            trials: p.n_trials,
            key_length: p.key_length,
            seed: p.seed,
            partial_credit: p.partial_credit,
        }
    }
}

impl RunConfig {
    /// Reads `path`, or returns defaults when no path is given.
    pub fn load(path: Option<&Path>) -> exit::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))
            .code(exit::CONFIG)?;
        serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
            .code(exit::CONFIG)
    }

    /// Fills derived defaults and checks cross-section consistency. Call
    /// after applying flag overrides.
    pub fn resolve(mut self) -> exit::Result<Self> {
        self.model.validate().code(exit::CONFIG)?;
        let ctx = self.model.trained_context;
        self.training.corpus.grammar.vocab_size = self.model.vocab_size;
        self.training.context_len.get_or_insert(ctx);
        let target = *self.search.target_length.get_or_insert(4 * ctx);
        self.search.scale.get_or_insert(target as f64 / ctx as f64);
        if self.eval.lengths.is_empty() {
            self.eval.lengths = vec![ctx, target];
        }
        if self.search.increments < 3 {
            return fail(
                exit::CONFIG,
                format!(
                    "search.increments must be >= 3, got {}",
                    self.search.increments
                ),
            );
        }
        let (l, r) = self.search.range;
        if !(l <= r) || !l.is_finite() || !r.is_finite() {
            return fail(
                exit::CONFIG,
                format!("search.range [{l}, {r}] is not an interval"),
            );
        }
        if self.search.samples == 0 || self.eval.samples == 0 {
            return fail(exit::CONFIG, "sample counts must be >= 1");
        }
        if !(0.0..1.0).contains(&self.training.corpus.holdout_fraction) {
            return fail(
                exit::CONFIG,
                "training.corpus.holdout_fraction must be in [0, 1)",
            );
        }
        Grammar::new(self.training.corpus.grammar.clone()).code(exit::CONFIG)?;
        Ok(self)
    }

    /// The effective configuration as JSON, for embedding in outputs.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.training;
        TrainOptions {
            steps: t.steps,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            context_len: t.context_len.unwrap_or(self.model.trained_context),
            seed: t.seed,
            grad_clip: t.grad_clip,
            beta1: t.beta1,
            beta2: t.beta2,
            warmup_steps: t.warmup_steps,
        }
    }

    pub fn grammar(&self) -> exit::Result<Grammar> {
        Grammar::new(self.training.corpus.grammar.clone()).code(exit::CONFIG)
    }

    /// Training corpus. Synthetic documents are `doc_len` tokens long so
    /// every training window starts a document.
    pub fn training_corpus(&self, doc_len: usize) -> exit::Result<Corpus> {
        let c = &self.training.corpus;
        match &c.file {
            Some(_) => Ok(self.file_corpus()?.split(1.0 - c.holdout_fraction).0),
            None => Ok(Corpus::synthetic(
                &self.grammar()?,
                c.tokens,
                doc_len,
                c.seed,
            )),
        }
    }

    /// `count` held-out windows of `len` tokens. Synthetic windows are whole
    /// documents and do not depend on `seed`.
    pub fn heldout(&self, count: usize, len: usize, seed: u64) -> exit::Result<Vec<Vec<u32>>> {
        let c = &self.training.corpus;
        let windows = match &c.file {
            Some(_) => {
                let tail = self.file_corpus()?.split(1.0 - c.holdout_fraction).1;
                tail.windows(count, len, seed)
            }
            None => Corpus::synthetic(&self.grammar()?, c.holdout_tokens, len, c.holdout_seed)
                .prefixes(count, len),
        };
        windows
            .map_err(|e| {
                anyhow::anyhow!(
                    "held-out corpus cannot supply {count} windows of {len} tokens: {e}"
                )
            })
            .code(exit::EVAL)
    }

    fn file_corpus(&self) -> exit::Result<Corpus> {
        let path = self.training.corpus.file.as_deref().expect("file corpus");
        Corpus::load(path, self.model.vocab_size).code(exit::CONFIG)
    }

    pub fn target_length(&self) -> usize {
        self.search
            .target_length
            .unwrap_or(4 * self.model.trained_context)
    }

    /// Initial factors for `scheme` at the configured scale.
    pub fn scheme_factors(&self, scheme: Scheme) -> exit::Result<ScalingFactors> {
        let m = &self.model;
        let s = self
            .search
            .scale
            .unwrap_or(self.target_length() as f64 / m.trained_context as f64);
        let rope = m.rope().code(exit::CONFIG)?;
        let factors = match scheme {
            Scheme::Ones => Ok(ScalingFactors::ones(m.num_pairs())),
            Scheme::Pi => pi_factors(m.head_dim, s),
            Scheme::Ntk => ntk_factors(&rope, s),
            Scheme::Yarn => yarn_factors(
                &rope,
                s,
                m.trained_context,
                self.search.ramp_low,
                self.search.ramp_high,
            ),
        };
        factors.code(exit::CONFIG)
    }
}
