//! Fixtures shared by the benchmarks: realistic similarity matrices and graph
//! batches built from the synthetic generator.

use corpgraph::dataset::{self, SplitPart};
use corpgraph::graph::{self, SimilarityMatrix};
use corpgraph::model::{GraphBatch, GraphSample};
use corpgraph::{pipeline, DataConfig};

/// Similarity matrix of one enterprise's four-year window.
pub fn enterprise_similarity(seed: u64) -> SimilarityMatrix {
    let data = dataset::generate_synthetic(10, 4, 0.1, seed).expect("valid generator arguments");
    let m = graph::indicator_vectors(&data.panels[0], 2017, 4).expect("four years of history");
    graph::cosine_similarity(&m)
}

/// Training samples of a small synthetic panel.
pub fn training_samples(enterprises: usize, seed: u64) -> Vec<GraphSample> {
    let data = dataset::generate_synthetic(enterprises, 5, 0.1, seed).expect("valid generator arguments");
    let cfg = DataConfig { sme_quantile: None, ..DataConfig::default() };
    let prepared = pipeline::prepare(data.panels, &cfg, None).expect("synthetic data prepares");
    prepared.samples(SplitPart::Train, &cfg).expect("samples build").1
}

pub fn batch(samples: &[GraphSample], size: usize) -> GraphBatch {
    GraphBatch::from_samples(&samples[..size.min(samples.len())]).expect("well-formed samples")
}
