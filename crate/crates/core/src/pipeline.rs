//! Glue from raw panels to trained models: filtering, splitting,
//! standardization, per-sample graph construction, training and evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, DatasetSplit, IndicatorPanel, LabelSpec, SampleKey, SplitPart, SplitRatios, Standardizer, ZeroVariancePolicy,
    N_INDICATORS,
};
use crate::diffcore::Array2;
use crate::error::{Error, Result};
use crate::graph::{self, CorpGraph, SimilarityMatrix};
use crate::metrics::{self, Evaluated};
use crate::model::{GraphSample, ModelConfig};
use crate::training::{self, Checkpoint, EpochRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    Tree,
    TreePlus,
}

/// How samples and their graphs are derived from the panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub num_classes: usize,
    /// Years of history per sample; also the node feature width.
    pub window: usize,
    pub graph: GraphMode,
    pub plus_k: usize,
    pub abs_similarity: bool,
    /// One graph from all training rows instead of one per sample.
    pub global_graph: bool,
    /// `None` disables the size filter.
    pub sme_quantile: Option<f64>,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub zero_variance: ZeroVariancePolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            window: 4,
            graph: GraphMode::Tree,
            plus_k: 10,
            abs_similarity: false,
            global_graph: false,
            sme_quantile: Some(0.8),
            split: SplitRatios::default(),
            split_seed: 0,
            zero_variance: ZeroVariancePolicy::UnitStd,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        LabelSpec::new(self.num_classes)?;
        if self.window < 2 {
            return Err(Error::InvalidArgument("window must be >= 2".into()));
        }
        Ok(())
    }
}

/// Builds the Corp_Tree (and optionally Corp_Tree+) for a similarity matrix.
pub fn graph_from_similarity(s: &SimilarityMatrix, cfg: &DataConfig) -> CorpGraph {
    let s = if cfg.abs_similarity { s.abs() } else { s.clone() };
    let tree = graph::max_spanning_tree(&s);
    match cfg.graph {
        GraphMode::Tree => tree,
        GraphMode::TreePlus => graph::augment_plus(&s, &tree, cfg.plus_k),
    }
}

/// Node features: each indicator's values over the window, oldest first,
/// left-padded with zeros when the history is shorter than the window.
pub fn node_features(m: &graph::IndicatorMatrix, window: usize) -> Array2 {
    let pad = window.saturating_sub(m.rows.len());
    let skip = m.rows.len().saturating_sub(window);
    Array2::from_fn(N_INDICATORS, window, |j, t| if t < pad { 0.0 } else { m.rows[skip + t - pad][j] })
}

/// The graph of one `(enterprise, year)` sample: the shared global graph
/// when given, otherwise one built from the sample's own window.
pub fn panel_graph(panel: &IndicatorPanel, year: i32, cfg: &DataConfig, global: Option<&CorpGraph>) -> Result<CorpGraph> {
    let m = graph::indicator_vectors(panel, year, cfg.window)?;
    Ok(match global {
        Some(g) => g.clone(),
        None => graph_from_similarity(&graph::cosine_similarity(&m), cfg),
    })
}

pub fn sample_graph(panel: &IndicatorPanel, year: i32, cfg: &DataConfig, global: Option<&CorpGraph>) -> Result<(GraphSample, CorpGraph)> {
    let labels = LabelSpec::new(cfg.num_classes)?;
    let level = panel
        .label_of_year(year)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no label for {year}", panel.enterprise_id)))?;
    let m = graph::indicator_vectors(panel, year, cfg.window)?;
    let g = panel_graph(panel, year, cfg, global)?;
    let sample = GraphSample {
        features: node_features(&m, cfg.window),
        edges: g.edges.iter().map(|e| (e.i, e.j)).collect(),
        label: labels.coarsen(level)?,
    };
    Ok((sample, g))
}

/// Panels after filtering and standardization, with the split they were
/// standardized for.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panels: Vec<IndicatorPanel>,
    pub standardizer: Standardizer,
    pub split: DatasetSplit,
    pub global_graph: Option<CorpGraph>,
}

/// Filters, splits and standardizes. When `standardizer` is given (restoring
/// from a checkpoint) it is used instead of refitting.
pub fn prepare(raw: Vec<IndicatorPanel>, cfg: &DataConfig, standardizer: Option<&Standardizer>) -> Result<Prepared> {
    cfg.validate()?;
    let panels = match cfg.sme_quantile {
        Some(q) => dataset::filter_sme(raw, q)?,
        None => raw,
    };
    let labels = LabelSpec::new(cfg.num_classes)?;
    let split = dataset::split_dataset(&panels, &cfg.split, cfg.split_seed, &labels)?;
    let fit_rows = split.train_rows(&panels);
    let (panels, standardizer) = match standardizer {
        Some(s) => (s.apply(&panels), s.clone()),
        None => dataset::standardize(&panels, &fit_rows, cfg.zero_variance)?,
    };
    let global_graph = cfg.global_graph.then(|| {
        let ids: std::collections::HashSet<&str> = fit_rows.iter().map(|k| k.enterprise_id.as_str()).collect();
        let rows: Vec<_> =
            panels.iter().filter(|p| ids.contains(p.enterprise_id.as_str())).flat_map(|p| p.values.iter().copied()).collect();
        graph_from_similarity(&graph::cosine_similarity_columns(&rows), cfg)
    });
    Ok(Prepared { panels, standardizer, split, global_graph })
}

impl Prepared {
    /// Graph samples for a split part, skipping keys with under two years of
    /// history. Returned keys line up with the samples.
    pub fn samples(&self, part: SplitPart, cfg: &DataConfig) -> Result<(Vec<SampleKey>, Vec<GraphSample>)> {
        let index: std::collections::HashMap<&str, &IndicatorPanel> =
            self.panels.iter().map(|p| (p.enterprise_id.as_str(), p)).collect();
        let mut keys = Vec::new();
        let mut samples = Vec::new();
        for key in self.split.part(part) {
            let panel = index[key.enterprise_id.as_str()];
            match sample_graph(panel, key.year, cfg, self.global_graph.as_ref()) {
                Ok((s, _)) => {
                    keys.push(key.clone());
                    samples.push(s);
                }
                Err(Error::InsufficientHistory { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok((keys, samples))
    }
}

/// Graphs for every `(enterprise, year)` with at least two years of history,
/// labeled or not. Standardization is fitted on all remaining rows, since
/// mapping involves no split.
pub fn map_panels(raw: Vec<IndicatorPanel>, cfg: &DataConfig) -> Result<Vec<(SampleKey, CorpGraph)>> {
    cfg.validate()?;
    let panels = match cfg.sme_quantile {
        Some(q) => dataset::filter_sme(raw, q)?,
        None => raw,
    };
    let all_rows: Vec<SampleKey> =
        panels.iter().flat_map(|p| p.years.iter().map(|&y| SampleKey::new(p.enterprise_id.clone(), y))).collect();
    let (panels, _) = dataset::standardize(&panels, &all_rows, cfg.zero_variance)?;
    let global = cfg.global_graph.then(|| {
        let rows: Vec<_> = panels.iter().flat_map(|p| p.values.iter().copied()).collect();
        graph_from_similarity(&graph::cosine_similarity_columns(&rows), cfg)
    });
    let mut out = Vec::new();
    for p in &panels {
        for &year in &p.years {
            match panel_graph(p, year, cfg, global.as_ref()) {
                Ok(g) => out.push((SampleKey::new(p.enterprise_id.clone(), year), g)),
                Err(Error::InsufficientHistory { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub validation: Option<Evaluated>,
}

/// `model.node_in_dim` and `model.num_classes` are overridden from `data`.
pub fn train(raw: Vec<IndicatorPanel>, data: &DataConfig, model: &ModelConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    let model = ModelConfig { node_in_dim: data.window, num_classes: data.num_classes, ..model.clone() };
    let prepared = prepare(raw, data, None)?;
    let (_, train_samples) = prepared.samples(SplitPart::Train, data)?;
    let (_, val_samples) = prepared.samples(SplitPart::Val, data)?;
    let fit = training::fit(&train_samples, &val_samples, &model, train)?;
    let validation = if val_samples.is_empty() {
        None
    } else {
        Some(evaluate_samples(&val_samples, &fit.params, &model)?)
    };
    let checkpoint = Checkpoint::new(model, train.clone(), data.clone(), prepared.standardizer, fit.params);
    Ok(TrainOutcome { checkpoint, history: fit.history, best_epoch: fit.best_epoch, validation })
}

pub fn evaluate_samples(samples: &[GraphSample], params: &crate::diffcore::ParameterStore, model: &ModelConfig) -> Result<Evaluated> {
    let e = training::evaluate(samples, params, model, 256)?;
    metrics::evaluate_scores(&e.probabilities, &e.predictions, &e.labels)
}

/// Rebuilds the checkpoint's split and evaluates on one part of it.
pub fn evaluate_checkpoint(raw: Vec<IndicatorPanel>, ckpt: &Checkpoint, part: SplitPart) -> Result<Evaluated> {
    let prepared = prepare(raw, &ckpt.data, Some(&ckpt.standardizer))?;
    let (_, samples) = prepared.samples(part, &ckpt.data)?;
    evaluate_samples(&samples, &ckpt.params, &ckpt.model)
}
