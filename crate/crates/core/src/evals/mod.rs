//! Perplexity and key-recall evaluation at arbitrary context lengths, and
//! report files.

mod passkey;
mod perplexity;
mod report;

pub use passkey::{
    build_trial, passkey_suite, GreedyDecoder, ModelDecoder, PasskeyOptions, PasskeyResult,
    DEFAULT_TRIALS,
};
pub use perplexity::{mean_nll, model_fingerprint, perplexity, ppl_curve};
pub use report::{EvalEntry, EvalReport, ReportFormat, CSV_HEADER};
