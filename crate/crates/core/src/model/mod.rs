//! Desk-scale causal language model used as the search objective and as
//! the subject of fine-tuning experiments.

mod checkpoint;
mod config;
mod corpus;
mod params;
mod real;
mod train;
mod transformer;

pub use checkpoint::{Checkpoint, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use corpus::{Corpus, Grammar, GrammarSpec, Markers, RESERVED_TOKENS, START_STATE};
pub use params::{ParamLayout, TensorSpec};
pub use real::{gemm, Real};
pub use train::{
    finetune_with_factors, train, Adam, StepLoss, TrainOptions, DEFAULT_FINETUNE_LR,
    DEFAULT_PRETRAIN_LR,
};
pub use transformer::{RotaryTable, ToyModel};
