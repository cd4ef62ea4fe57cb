//! Gallery-based retrieval evaluation of identity preservation.
//!
//! Generated-image embeddings are used as queries against identity-labeled
//! galleries of similar real images and scored with mean average precision,
//! next to the pairwise cosine baselines.

pub mod cli;
pub mod embstore;
pub mod engine;
pub mod error;
pub mod gallery;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod synth;

pub use embstore::{load_set, write_set, DatasetManifest, EmbeddingRecord, EmbeddingSet, Format, Role};
pub use engine::{
    AblationAxis, AblationGrid, AblationSpec, AxisValue, EvalConfig, EvalMode, Evaluator, GallerySource,
    RunResult,
};
pub use error::{Error, Result, ValidationError};
pub use gallery::{GallerySpec, SplitConfig, Strategy};
pub use metrics::{MapAggregation, PairwiseMode};
