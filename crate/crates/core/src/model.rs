//! Graph classifier: node embedding, stacked mean-aggregator GraphSAGE layers
//! each followed by TopK pooling and a mean readout, the average of the
//! readouts, and a two-layer MLP head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{self as dc, Array2, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub node_in_dim: usize,
    pub hidden_dim: usize,
    pub sage_layers: usize,
    pub pool_ratio: f64,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    /// Normalize each GraphSAGE output row to unit length.
    pub l2_normalize: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(4, 3, 0)
    }
}

impl ModelConfig {
    pub fn new(node_in_dim: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            node_in_dim,
            hidden_dim: 32,
            sage_layers: 3,
            pool_ratio: 0.8,
            mlp_hidden: 64,
            num_classes,
            l2_normalize: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.node_in_dim == 0 || self.hidden_dim == 0 || self.mlp_hidden == 0 || self.sage_layers == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return bad(format!("pool ratio {} not in (0, 1]", self.pool_ratio));
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        Ok(())
    }
}

/// One graph: node features plus undirected edges over local node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub features: Array2,
    pub edges: Vec<(usize, usize)>,
    pub label: usize,
}

/// Several graphs stacked block-diagonally.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub x: Array2,
    pub edges: Vec<(usize, usize)>,
    pub graph_of_node: Vec<usize>,
    pub num_graphs: usize,
    pub labels: Vec<usize>,
}

impl GraphBatch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a GraphSample>) -> Result<Self> {
        let samples: Vec<&GraphSample> = samples.into_iter().collect();
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let width = first.features.cols();
        let total: usize = samples.iter().map(|s| s.features.rows()).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut edges = Vec::new();
        let mut graph_of_node = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(samples.len());
        let mut offset = 0;
        for (g, s) in samples.iter().enumerate() {
            let n = s.features.rows();
            if s.features.cols() != width {
                return Err(Error::shape("GraphBatch", format!("feature width {} vs {width}", s.features.cols())));
            }
            if n == 0 {
                return Err(Error::InvalidArgument(format!("graph {g} has no nodes")));
            }
            for &(a, b) in &s.edges {
                if a >= n || b >= n {
                    return Err(Error::MalformedGraph(format!("edge ({a}, {b}) in a {n}-node graph")));
                }
                edges.push((a + offset, b + offset));
            }
            data.extend_from_slice(s.features.data());
            graph_of_node.extend(std::iter::repeat_n(g, n));
            labels.push(s.label);
            offset += n;
        }
        Ok(Self { x: Array2::from_vec(total, width, data)?, edges, graph_of_node, num_graphs: samples.len(), labels })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }
}

// ---------------------------------------------------------------------------
// Parameters

pub fn sage_name(layer: usize, part: &str) -> String {
    format!("sage{layer}.{part}")
}

pub fn pool_name(layer: usize) -> String {
    format!("pool{layer}.p")
}

fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Glorot-uniform weights, zero biases, deterministic in `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.hidden_dim;
    let mut store = ParameterStore::new();
    store.insert("embed.W", glorot(cfg.node_in_dim, h, cfg.node_in_dim, h, &mut rng))?;
    store.insert("embed.b", Array2::zeros(1, h))?;
    for l in 1..=cfg.sage_layers {
        store.insert(sage_name(l, "Wself"), glorot(h, h, h, h, &mut rng))?;
        store.insert(sage_name(l, "Wneigh"), glorot(h, h, h, h, &mut rng))?;
        store.insert(sage_name(l, "b"), Array2::zeros(1, h))?;
    }
    for l in 1..=cfg.sage_layers {
        store.insert(pool_name(l), glorot(h, 1, h, 1, &mut rng))?;
    }
    store.insert("mlp.W1", glorot(h, cfg.mlp_hidden, h, cfg.mlp_hidden, &mut rng))?;
    store.insert("mlp.b1", Array2::zeros(1, cfg.mlp_hidden))?;
    store.insert("mlp.W2", glorot(cfg.mlp_hidden, cfg.num_classes, cfg.mlp_hidden, cfg.num_classes, &mut rng))?;
    store.insert("mlp.b2", Array2::zeros(1, cfg.num_classes))?;
    Ok(store)
}

// ---------------------------------------------------------------------------
// Layers

struct EmbedCache {
    pre: Array2,
}

/// `ReLU(x·W + b)`.
pub fn embed_nodes(x: &Array2, params: &ParameterStore) -> Result<Array2> {
    Ok(embed_forward(x, params)?.0)
}

fn embed_forward(x: &Array2, params: &ParameterStore) -> Result<(Array2, EmbedCache)> {
    let w = params.value("embed.W")?;
    if x.cols() != w.rows() {
        return Err(Error::shape("embed_nodes", format!("features {} wide, expected {}", x.cols(), w.rows())));
    }
    let pre = dc::add_bias(&dc::matmul(x, w)?, params.value("embed.b")?)?;
    Ok((dc::relu(&pre), EmbedCache { pre }))
}

/// Each undirected edge as two directed `(source, target)` messages.
fn directed(edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(edges.len() * 2);
    let mut dst = Vec::with_capacity(edges.len() * 2);
    for &(a, b) in edges {
        src.push(a);
        dst.push(b);
        src.push(b);
        dst.push(a);
    }
    (src, dst)
}

struct SageCache {
    h_in: Array2,
    src: Vec<usize>,
    dst: Vec<usize>,
    agg: Array2,
    pre: Array2,
    act: Array2,
    out: Array2,
    l2: bool,
}

/// `ReLU(h_v·Wself + mean_{u∈N(v)} h_u·Wneigh + b)`; isolated nodes get a
/// zero neighbor mean.
pub fn sage_forward(h: &Array2, edges: &[(usize, usize)], params: &ParameterStore, layer: usize, l2: bool) -> Result<Array2> {
    Ok(sage_forward_cached(h, edges, params, layer, l2)?.out)
}

fn sage_forward_cached(h: &Array2, edges: &[(usize, usize)], params: &ParameterStore, layer: usize, l2: bool) -> Result<SageCache> {
    let (src, dst) = directed(edges);
    let agg = dc::segment_mean(&dc::gather_rows(h, &src)?, &dst, h.rows())?;
    let own = dc::matmul(h, params.value(&sage_name(layer, "Wself"))?)?;
    let neigh = dc::matmul(&agg, params.value(&sage_name(layer, "Wneigh"))?)?;
    let pre = dc::add_bias(&dc::add(&own, &neigh)?, params.value(&sage_name(layer, "b"))?)?;
    let act = dc::relu(&pre);
    let out = if l2 { dc::row_l2_normalize(&act) } else { act.clone() };
    Ok(SageCache { h_in: h.clone(), src, dst, agg, pre, act, out, l2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput {
    /// Gated features of the kept nodes, grouped by graph.
    pub h: Array2,
    pub edges: Vec<(usize, usize)>,
    pub graph_of_node: Vec<usize>,
    /// Input row of each kept node.
    pub kept: Vec<usize>,
    /// Projection score of every input node.
    pub scores: Vec<f64>,
}

struct PoolCache {
    p_unit: Array2,
    h_kept: Array2,
    gate: Array2,
    n_in: usize,
    kept: Vec<usize>,
}

/// Number of nodes TopK keeps out of `n`.
pub fn kept_count(n: usize, ratio: f64) -> usize {
    if n == 0 {
        0
    } else {
        ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
    }
}

/// Scores nodes by `⟨h_v, p⟩/‖p‖`, keeps the top `⌈ratio·n_g⌉` of each graph
/// (ties to the lower node id), gates the kept rows by `tanh(score)` and keeps
/// only edges between kept nodes.
pub fn topk_pool(
    h: &Array2,
    edges: &[(usize, usize)],
    graph_of_node: &[usize],
    num_graphs: usize,
    p: &Array2,
    ratio: f64,
    layer: usize,
) -> Result<PoolOutput> {
    Ok(topk_pool_cached(h, edges, graph_of_node, num_graphs, p, ratio, layer)?.0)
}

fn topk_pool_cached(
    h: &Array2,
    edges: &[(usize, usize)],
    graph_of_node: &[usize],
    num_graphs: usize,
    p: &Array2,
    ratio: f64,
    layer: usize,
) -> Result<(PoolOutput, PoolCache)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("pool ratio {ratio} not in (0, 1]")));
    }
    if p.norm() < 1e-12 {
        return Err(Error::ZeroProjection(layer));
    }
    let p_unit = dc::l2_normalize(p)?;
    let score = dc::matmul(h, &p_unit)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (v, &g) in graph_of_node.iter().enumerate() {
        members.get_mut(g).ok_or(Error::BadSegmentId { id: g, n_segments: num_graphs })?.push(v);
    }
    let mut kept = Vec::with_capacity(h.rows());
    let mut graph_out = Vec::with_capacity(h.rows());
    for (g, nodes) in members.iter_mut().enumerate() {
        let k = kept_count(nodes.len(), ratio);
        nodes.sort_by(|&a, &b| score.get(b, 0).total_cmp(&score.get(a, 0)).then(a.cmp(&b)));
        kept.extend_from_slice(&nodes[..k]);
        graph_out.extend(std::iter::repeat_n(g, k));
    }

    let mut new_id = vec![usize::MAX; h.rows()];
    for (i, &v) in kept.iter().enumerate() {
        new_id[v] = i;
    }
    let new_edges = edges
        .iter()
        .filter_map(|&(a, b)| (new_id[a] != usize::MAX && new_id[b] != usize::MAX).then(|| (new_id[a], new_id[b])))
        .collect();

    let h_kept = dc::gather_rows(h, &kept)?;
    let gate = dc::tanh(&dc::gather_rows(&score, &kept)?);
    let gated = dc::scale_rows(&h_kept, &gate)?;
    let out = PoolOutput {
        h: gated,
        edges: new_edges,
        graph_of_node: graph_out,
        kept: kept.clone(),
        scores: score.data().to_vec(),
    };
    Ok((out, PoolCache { p_unit, h_kept, gate, n_in: h.rows(), kept }))
}

/// Per-graph mean of node features; graphs without nodes read out zeros.
pub fn readout_mean(h: &Array2, graph_of_node: &[usize], num_graphs: usize) -> Result<Array2> {
    dc::segment_mean(h, graph_of_node, num_graphs)
}

// ---------------------------------------------------------------------------
// Whole model

struct LayerCache {
    sage: SageCache,
    pool: PoolCache,
    graph_of_node: Vec<usize>,
    node_counts: usize,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    x: Array2,
    num_graphs: usize,
    embed: EmbedCache,
    layers: Vec<LayerCache>,
    readout: Array2,
    mlp_pre: Array2,
    mlp_act: Array2,
}

impl ForwardCache {
    /// Surviving node count after each pooling layer.
    pub fn pooled_node_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.node_counts).collect()
    }

    /// The averaged graph embedding fed to the MLP head.
    pub fn graph_embedding(&self) -> &Array2 {
        &self.readout
    }
}

pub fn model_forward(batch: &GraphBatch, params: &ParameterStore, cfg: &ModelConfig) -> Result<(Array2, ForwardCache)> {
    if batch.x.cols() != cfg.node_in_dim {
        return Err(Error::shape("model_forward", format!("features {} wide, config says {}", batch.x.cols(), cfg.node_in_dim)));
    }
    let (mut h, embed) = embed_forward(&batch.x, params)?;
    let mut edges = batch.edges.clone();
    let mut graph_of_node = batch.graph_of_node.clone();
    let mut layers = Vec::with_capacity(cfg.sage_layers);
    let mut readout = Array2::zeros(batch.num_graphs, cfg.hidden_dim);

    for l in 1..=cfg.sage_layers {
        let sage = sage_forward_cached(&h, &edges, params, l, cfg.l2_normalize)?;
        let (pooled, pool) =
            topk_pool_cached(&sage.out, &edges, &graph_of_node, batch.num_graphs, params.value(&pool_name(l))?, cfg.pool_ratio, l)?;
        readout.add_assign(&readout_mean(&pooled.h, &pooled.graph_of_node, batch.num_graphs)?);
        layers.push(LayerCache {
            sage,
            pool,
            graph_of_node: pooled.graph_of_node.clone(),
            node_counts: pooled.h.rows(),
        });
        h = pooled.h;
        edges = pooled.edges;
        graph_of_node = pooled.graph_of_node;
    }
    let readout = readout.scaled(1.0 / cfg.sage_layers as f64);

    let mlp_pre = dc::add_bias(&dc::matmul(&readout, params.value("mlp.W1")?)?, params.value("mlp.b1")?)?;
    let mlp_act = dc::relu(&mlp_pre);
    let logits = dc::add_bias(&dc::matmul(&mlp_act, params.value("mlp.W2")?)?, params.value("mlp.b2")?)?;
    let cache = ForwardCache { x: batch.x.clone(), num_graphs: batch.num_graphs, embed, layers, readout, mlp_pre, mlp_act };
    Ok((logits, cache))
}

/// Accumulates the gradient of the loss into `params` given `dlogits`.
pub fn model_backward(cache: &ForwardCache, dlogits: &Array2, params: &mut ParameterStore) -> Result<()> {
    let (d_act, d_w2) = dc::matmul_backward(&cache.mlp_act, params.value("mlp.W2")?, dlogits)?;
    params.accumulate_grad("mlp.W2", &d_w2)?;
    params.accumulate_grad("mlp.b2", &dc::add_bias_backward(dlogits))?;
    let d_pre = dc::relu_backward(&cache.mlp_pre, &d_act);
    let (d_readout, d_w1) = dc::matmul_backward(&cache.readout, params.value("mlp.W1")?, &d_pre)?;
    params.accumulate_grad("mlp.W1", &d_w1)?;
    params.accumulate_grad("mlp.b1", &dc::add_bias_backward(&d_pre))?;
    let d_readout = d_readout.scaled(1.0 / cache.layers.len() as f64);

    // Gradient flowing into the (pooled) input of the layer above.
    let mut d_h: Option<Array2> = None;
    for (idx, layer) in cache.layers.iter().enumerate().rev() {
        let l = idx + 1;
        let mut d_pooled = dc::segment_mean_backward(&d_readout, &layer.graph_of_node, cache.num_graphs)?;
        if let Some(up) = d_h.take() {
            d_pooled.add_assign(&up);
        }

        let pool = &layer.pool;
        let (d_kept, d_gate) = dc::scale_rows_backward(&pool.h_kept, &pool.gate, &d_pooled);
        let d_score_kept = dc::tanh_backward(&pool.gate, &d_gate);
        let d_score = dc::gather_rows_backward(&d_score_kept, &pool.kept, pool.n_in);
        let mut d_out = dc::gather_rows_backward(&d_kept, &pool.kept, pool.n_in);
        let (d_out_score, d_p_unit) = dc::matmul_backward(&layer.sage.out, &pool.p_unit, &d_score)?;
        d_out.add_assign(&d_out_score);
        let p = params.value(&pool_name(l))?;
        let d_p = dc::l2_normalize_backward(p, &pool.p_unit, &d_p_unit);
        params.accumulate_grad(&pool_name(l), &d_p)?;

        let sage = &layer.sage;
        let d_act = if sage.l2 {
            dc::row_l2_normalize_backward(&sage.act, &sage.out, &d_out)
        } else {
            d_out
        };
        let d_pre = dc::relu_backward(&sage.pre, &d_act);
        params.accumulate_grad(&sage_name(l, "b"), &dc::add_bias_backward(&d_pre))?;
        let (mut d_in, d_wself) = dc::matmul_backward(&sage.h_in, params.value(&sage_name(l, "Wself"))?, &d_pre)?;
        let (d_agg, d_wneigh) = dc::matmul_backward(&sage.agg, params.value(&sage_name(l, "Wneigh"))?, &d_pre)?;
        params.accumulate_grad(&sage_name(l, "Wself"), &d_wself)?;
        params.accumulate_grad(&sage_name(l, "Wneigh"), &d_wneigh)?;
        let d_msg = dc::segment_mean_backward(&d_agg, &sage.dst, sage.h_in.rows())?;
        d_in.add_assign(&dc::gather_rows_backward(&d_msg, &sage.src, sage.h_in.rows()));
        d_h = Some(d_in);
    }

    let d_embed = dc::relu_backward(&cache.embed.pre, &d_h.expect("at least one layer"));
    let (_, d_we) = dc::matmul_backward(&cache.x, params.value("embed.W")?, &d_embed)?;
    params.accumulate_grad("embed.W", &d_we)?;
    params.accumulate_grad("embed.b", &dc::add_bias_backward(&d_embed))?;
    Ok(())
}

/// Zeroes the gradients, runs forward and backward, and returns the loss.
pub fn loss_and_grad(
    batch: &GraphBatch,
    params: &mut ParameterStore,
    cfg: &ModelConfig,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    params.zero_grad();
    let (logits, cache) = model_forward(batch, params, cfg)?;
    let (loss, probs) = dc::softmax_xent(&logits, &batch.labels, class_weights)?;
    let dlogits = dc::softmax_xent_backward(&probs, &batch.labels, class_weights);
    model_backward(&cache, &dlogits, params)?;
    Ok(loss)
}

pub fn batch_loss(batch: &GraphBatch, params: &ParameterStore, cfg: &ModelConfig, class_weights: Option<&[f64]>) -> Result<f64> {
    let (logits, _) = model_forward(batch, params, cfg)?;
    Ok(dc::softmax_xent(&logits, &batch.labels, class_weights)?.0)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(batch: &GraphBatch, params: &ParameterStore, cfg: &ModelConfig) -> Result<(Vec<usize>, Array2)> {
    let (logits, _) = model_forward(batch, params, cfg)?;
    let probs = dc::softmax(&logits);
    let classes = (0..probs.rows()).map(|r| argmax(probs.row(r))).collect();
    Ok((classes, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_graph(n: usize, width: usize, extra_edges: usize, label: usize, rng: &mut ChaCha8Rng) -> GraphSample {
        let features = Array2::from_fn(n, width, |_, _| rng.random_range(-2.0..2.0));
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
        for _ in 0..extra_edges {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        GraphSample { features, edges, label }
    }

    #[test]
    fn parameter_layout() {
        let cfg = ModelConfig::new(4, 3, 11);
        let store = init_params(&cfg).unwrap();
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names[..5], ["embed.W", "embed.b", "sage1.Wself", "sage1.Wneigh", "sage1.b"]);
        assert_eq!(names[11..14], ["pool1.p", "pool2.p", "pool3.p"]);
        assert_eq!(names[14..], ["mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2"]);
        // Sum of the declared shapes, counted independently of the store.
        let shapes = [(4, 32), (1, 32)]
            .into_iter()
            .chain((0..3).flat_map(|_| [(32, 32), (32, 32), (1, 32)]))
            .chain((0..3).map(|_| (32, 1)))
            .chain([(32, 64), (1, 64), (64, 3), (1, 3)]);
        let expected: usize = shapes.map(|(r, c)| r * c).sum();
        assert_eq!(expected, 8803);
        assert_eq!(store.num_values(), expected);
        assert_eq!(init_params(&cfg).unwrap(), store);
        for (name, p) in store.iter() {
            if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let bound = (6.0f64 / 64.0).sqrt();
        assert!(store.value("sage2.Wself").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn embed_zero_input_is_zero() {
        let cfg = ModelConfig::new(4, 3, 1);
        let store = init_params(&cfg).unwrap();
        let out = embed_nodes(&Array2::zeros(5, 4), &store).unwrap();
        assert_eq!(out.shape(), (5, 32));
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(embed_nodes(&Array2::zeros(5, 3), &store).is_err());
    }

    #[test]
    fn sage_without_edges_uses_self_term_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ModelConfig::new(4, 3, 2);
        let store = init_params(&cfg).unwrap();
        let h = Array2::from_fn(3, 32, |_, _| rng.random_range(-1.0..1.0));
        let out = sage_forward(&h, &[], &store, 1, false).unwrap();
        let expected = dc::relu(&dc::matmul(&h, store.value("sage1.Wself").unwrap()).unwrap());
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn sage_two_clique_is_symmetric() {
        let cfg = ModelConfig::new(4, 3, 3);
        let store = init_params(&cfg).unwrap();
        let h = Array2::from_fn(2, 32, |_, c| (c as f64 * 0.37).sin());
        let out = sage_forward(&h, &[(0, 1)], &store, 2, false).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn sage_matches_per_node_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig::new(4, 3, 4);
        let mut store = init_params(&cfg).unwrap();
        store.get_mut("sage1.b").unwrap().value = Array2::from_fn(1, 32, |_, _| rng.random_range(-0.5..0.5));
        let h = Array2::from_fn(5, 32, |_, _| rng.random_range(-1.0..1.0));
        let edges = [(0, 1), (1, 2), (1, 3), (3, 4), (0, 4)];
        let out = sage_forward(&h, &edges, &store, 1, false).unwrap();

        let ws = store.value("sage1.Wself").unwrap();
        let wn = store.value("sage1.Wneigh").unwrap();
        let b = store.value("sage1.b").unwrap();
        for v in 0..5 {
            let nbrs: Vec<usize> =
                edges.iter().filter_map(|&(a, c)| if a == v { Some(c) } else if c == v { Some(a) } else { None }).collect();
            for o in 0..32 {
                let mut acc = b.get(0, o);
                for i in 0..32 {
                    let mean = nbrs.iter().map(|&u| h.get(u, i)).sum::<f64>() / nbrs.len() as f64;
                    acc += h.get(v, i) * ws.get(i, o) + mean * wn.get(i, o);
                }
                assert!((out.get(v, o) - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_keeps_ceiling_fraction_per_graph() {
        assert_eq!(kept_count(29, 0.8), 24);
        assert_eq!(kept_count(24, 0.8), 20);
        assert_eq!(kept_count(20, 0.8), 16);
        assert_eq!(kept_count(1, 0.1), 1);
        assert_eq!(kept_count(0, 0.5), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(29, 4, 0, 0, &mut rng);
        let batch = GraphBatch::from_samples([&g, &g]).unwrap();
        let cfg = ModelConfig::new(4, 3, 5);
        let store = init_params(&cfg).unwrap();
        let (_, cache) = model_forward(&batch, &store, &cfg).unwrap();
        assert_eq!(cache.pooled_node_counts(), vec![48, 40, 32]);
    }

    #[test]
    fn pooling_ratio_one_only_gates() {
        let h = Array2::from_fn(3, 2, |r, c| (r + c) as f64 * 0.3 - 0.2);
        let p = Array2::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let out = topk_pool(&h, &[(0, 1), (1, 2)], &[0, 0, 0], 1, &p, 1.0, 1).unwrap();
        assert_eq!(out.h.rows(), 3);
        for (i, &v) in out.kept.iter().enumerate() {
            let y = (h.get(v, 0) * 3.0 + h.get(v, 1) * 4.0) / 5.0;
            assert!((out.h.get(i, 0) - h.get(v, 0) * y.tanh()).abs() < 1e-15);
        }
        assert_eq!(out.edges.len(), 2);
    }

    #[test]
    fn pooling_ties_keep_lowest_ids_and_drop_dangling_edges() {
        let h = Array2::filled(5, 2, 1.0);
        let p = Array2::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let out = topk_pool(&h, &[(0, 4), (1, 2), (2, 3)], &[0; 5], 1, &p, 0.6, 1).unwrap();
        assert_eq!(out.kept, vec![0, 1, 2]);
        assert_eq!(out.edges, vec![(1, 2)]);
        assert!(matches!(
            topk_pool(&h, &[], &[0; 5], 1, &Array2::zeros(2, 1), 0.5, 2),
            Err(Error::ZeroProjection(2))
        ));
    }

    #[test]
    fn readout_conventions() {
        let h = Array2::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = readout_mean(&h, &[0, 1, 1], 3).unwrap();
        assert_eq!(r.row(0), &[1.0, 2.0]);
        assert_eq!(r.row(1), &[4.0, 5.0]);
        assert_eq!(r.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn output_shapes_and_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(7, 4, 2, 1, &mut rng);
        let batch = GraphBatch::from_samples([&g]).unwrap();
        let cfg = ModelConfig::new(4, 3, 6);
        let store = init_params(&cfg).unwrap();
        let (logits, _) = model_forward(&batch, &store, &cfg).unwrap();
        assert_eq!(logits.shape(), (1, 3));
        let (classes, probs) = predict(&batch, &store, &cfg).unwrap();
        assert!((probs.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(classes[0], argmax(logits.row(0)));
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ModelConfig::new(4, 5, 7);
        let mut store = init_params(&cfg).unwrap();
        for (name, p) in store.iter_mut() {
            if !name.starts_with("pool") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let g = random_graph(9, 4, 3, 2, &mut rng);
        let batch = GraphBatch::from_samples([&g]).unwrap();
        let (logits, _) = model_forward(&batch, &store, &cfg).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert!((batch_loss(&batch, &store, &cfg, None).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batches_are_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_graph(3, 4, 0, 0, &mut rng);
        let b = random_graph(4, 4, 0, 1, &mut rng);
        let batch = GraphBatch::from_samples([&a, &b]).unwrap();
        assert_eq!(batch.num_nodes(), 7);
        assert_eq!(batch.graph_of_node, vec![0, 0, 0, 1, 1, 1, 1]);
        assert!(batch.edges.iter().all(|&(u, v)| batch.graph_of_node[u] == batch.graph_of_node[v]));
        assert_eq!(batch.labels, vec![0, 1]);
    }
}
