use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RopeError {
    #[error("head_dim must be even and >= 4, got {0}")]
    InvalidHeadDim(usize),
    #[error("rope base must be finite and > 1, got {0}")]
    InvalidBase(f64),
    #[error("scaling factor vector is empty")]
    EmptyFactors,
    #[error("scaling factor {0} is not finite")]
    NonFiniteFactor(usize),
    #[error("expected {expected} scaling factors, got {actual}")]
    FactorLength { expected: usize, actual: usize },
    #[error("input vector has length {actual}, expected {expected}")]
    InputShape { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("scale must be >= 1, got {0}")]
    InvalidScale(f64),
    #[error("ramp bounds must satisfy low < high, got [{low}, {high}]")]
    InvalidRamp { low: f64, high: f64 },
    #[error("trained context must be positive")]
    InvalidContext,
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error("factors document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("factors document declares head_dim {head_dim} but holds {len} factors")]
    DocumentLength { head_dim: usize, len: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("factor count {0} is not a power of two >= 2")]
    UnsupportedDimension(usize),
    #[error("need at least {min} increments, got {got}")]
    InvalidCount { min: usize, got: usize },
    #[error("invalid range [{low}, {high}]")]
    InvalidRange { low: f64, high: f64 },
    #[error("segment ({start}, {width}) exceeds {len} factors")]
    SegmentOutOfBounds {
        start: usize,
        width: usize,
        len: usize,
    },
    #[error("{values} values but {scores} scores")]
    LengthMismatch { values: usize, scores: usize },
    #[error("objective failed on segment {start}+{width} at increment {increment}: {source}")]
    Objective {
        start: usize,
        width: usize,
        increment: f64,
        #[source]
        source: ObjectiveError,
    },
    #[error("search aborted after {} steps: {source}", .trace.steps.len())]
    Aborted {
        trace: Box<crate::search::SearchTrace>,
        #[source]
        source: Box<SearchError>,
    },
    #[error("invalid objective parameters: {0}")]
    ObjectiveParams(String),
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error("{0}")]
    Custom(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token {token} at position {position} is outside vocabulary of {vocab}")]
    TokenOutOfVocab {
        token: u32,
        position: usize,
        vocab: usize,
    },
    #[error("sequence of length {0} is too short (need >= 2)")]
    SequenceTooShort(usize),
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("corpus is empty or has no sequence long enough for context {0}")]
    EmptyCorpus(usize),
    #[error("invalid training options: {0}")]
    Training(String),
    #[error("corpus file {path}: {msg}")]
    CorpusFile { path: PathBuf, msg: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no evaluation samples")]
    NoSamples,
    #[error("sample {index} has length {len}, shorter than eval length {eval_length}")]
    SampleTooShort {
        index: usize,
        len: usize,
        eval_length: usize,
    },
    #[error("vocabulary of {vocab} has no room for reserved marker tokens")]
    MissingMarkers { vocab: usize },
    #[error("context length {context} cannot hold a key of {key_length} tokens plus markers")]
    ContextTooShort { context: usize, key_length: usize },
    #[error("lengths must be sorted ascending")]
    UnsortedLengths,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report format: {0}")]
    Format(String),
}
