//! Scaled rotary position embeddings and a divide-and-conquer incremental
//! search for per-pair scaling factors that extend a causal language
//! model's usable context, with a small deterministic transformer to run
//! it against.

pub mod error;
pub mod evals;
mod io;
pub mod model;
pub mod rope;
pub mod schemes;
pub mod search;

pub use error::{
    CheckpointError, EvalError, ModelError, ObjectiveError, RopeError, SchemeError, SearchError,
};
pub use io::write_atomic;
pub use model::{Checkpoint, Corpus, ModelConfig, ToyModel};
pub use rope::{RopeConfig, ScalingFactors};
pub use schemes::FactorsDocument;
pub use search::{dcis_search, SearchConfig, SearchTrace};
