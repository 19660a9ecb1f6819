//! Credit rating from enterprise financial indicators via indicator graphs.
//!
//! Each enterprise-year becomes a graph over the 29 financial indicators:
//! vertices are indicators, edges come from a maximum spanning tree of the
//! cosine similarities between indicator histories (optionally with the
//! strongest remaining pairs added back). A GraphSAGE + TopK pooling network
//! classifies the graphs into coarsened rating classes.

pub mod dataset;
pub mod diffcore;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod training;

pub use dataset::{IndicatorPanel, IndicatorSchema, LabelSpec, SampleKey, INDICATOR_NAMES, N_INDICATORS};
pub use diffcore::{Array2, ParameterStore};
pub use error::{Error, Result};
pub use graph::{CorpGraph, GraphKind, SimilarityMatrix};
pub use model::{GraphBatch, GraphSample, ModelConfig};
pub use pipeline::{DataConfig, GraphMode};
pub use training::{Checkpoint, TrainConfig};
