//! Knowledge-graph embeddings smoothed by knowledge-query graph convolution.
//!
//! The pipeline pre-trains TransE embeddings ([`transe`]), feeds them as a
//! frozen input to a linear graph convolution that aggregates knowledge
//! queries `h_src + h_rel` ([`layer`]), and evaluates the resulting user
//! embeddings on a downstream classification task ([`eval`]).

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layer;
pub mod pipeline;
pub mod synth;
pub mod transe;

pub use error::{Error, Result};
pub use graph::{Direction, EntityKind, IdMode, KnowledgeGraph, MessageEdge, Triple};
pub use layer::{Aggregator, CoefficientRule, KqgcParams, LayerParams, LayerState, PairDataset};
pub use transe::{EmbeddingTable, TrainConfig};
