//! Indicator graphs: cosine similarity between indicator columns, the
//! maximum spanning tree over it, and the augmented tree with the strongest
//! remaining edges added back.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{IndicatorPanel, N_INDICATORS};
use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

/// Dense row-major `window × n_indicators` slice of a panel, oldest row first.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    pub years: Vec<i32>,
    pub rows: Vec<[f64; N_INDICATORS]>,
}

impl IndicatorMatrix {
    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }
}

/// The last up-to-`window` rows of `panel` with year `<= end_year`.
pub fn indicator_vectors(panel: &IndicatorPanel, end_year: i32, window: usize) -> Result<IndicatorMatrix> {
    let end = panel.years.partition_point(|&y| y <= end_year);
    let start = end.saturating_sub(window.max(1));
    if end - start < 2 {
        return Err(Error::InsufficientHistory { id: panel.enterprise_id.clone(), end_year });
    }
    Ok(IndicatorMatrix { years: panel.years[start..end].to_vec(), rows: panel.values[start..end].to_vec() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Replace every off-diagonal entry by its absolute value.
    pub fn abs(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(i, j).abs())
    }
}

/// Pairwise cosine similarity of the columns of `rows`. Pairs involving a
/// column with (near-)zero norm get similarity 0.
pub fn cosine_similarity_columns(rows: &[impl AsRef<[f64]>]) -> SimilarityMatrix {
    let n = rows.first().map_or(0, |r| r.as_ref().len());
    let norms: Vec<f64> = (0..n).map(|j| rows.iter().map(|r| r.as_ref()[j].powi(2)).sum::<f64>().sqrt()).collect();
    SimilarityMatrix::from_fn(n, |i, j| {
        if norms[i] < NORM_FLOOR || norms[j] < NORM_FLOOR {
            return 0.0;
        }
        let dot: f64 = rows.iter().map(|r| r.as_ref()[i] * r.as_ref()[j]).sum();
        (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
    })
}

pub fn cosine_similarity(m: &IndicatorMatrix) -> SimilarityMatrix {
    cosine_similarity_columns(&m.rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Tree,
    TreePlus(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpGraph {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub kind: GraphKind,
}

/// Descending weight, then `(i, j)` ascending.
fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    b.weight.total_cmp(&a.weight).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j))
}

fn all_pairs(s: &SimilarityMatrix) -> Vec<Edge> {
    let n = s.n();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push(Edge { i, j, weight: s.get(i, j) });
        }
    }
    edges
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Greedy maximum spanning tree: consider pairs by descending similarity and
/// keep each one that does not close a cycle, until `n - 1` edges are chosen.
pub fn max_spanning_tree(s: &SimilarityMatrix) -> CorpGraph {
    let n = s.n();
    let mut candidates = all_pairs(s);
    candidates.sort_by(edge_order);
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for e in candidates {
        if edges.len() + 1 >= n.max(1) {
            break;
        }
        if uf.union(e.i, e.j) {
            edges.push(e);
        }
    }
    CorpGraph { n, edges, kind: GraphKind::Tree }
}

/// Adds the `k` strongest pairs not already in `tree`.
pub fn augment_plus(s: &SimilarityMatrix, tree: &CorpGraph, k: usize) -> CorpGraph {
    let mut present = vec![false; s.n() * s.n()];
    for e in &tree.edges {
        present[e.i * s.n() + e.j] = true;
    }
    let mut rest: Vec<Edge> = all_pairs(s).into_iter().filter(|e| !present[e.i * s.n() + e.j]).collect();
    rest.sort_by(edge_order);
    let mut edges = tree.edges.clone();
    edges.extend(rest.into_iter().take(k));
    CorpGraph { n: tree.n, edges, kind: GraphKind::TreePlus(k) }
}

impl CorpGraph {
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// True when the edges connect all `n` vertices.
    pub fn is_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.n);
        let mut components = self.n;
        for e in &self.edges {
            if uf.union(e.i, e.j) {
                components -= 1;
            }
        }
        components <= 1
    }

    pub fn is_acyclic(&self) -> bool {
        let mut uf = UnionFind::new(self.n);
        self.edges.iter().all(|e| uf.union(e.i, e.j))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.i >= e.j || e.j >= self.n {
                return Err(Error::MalformedGraph(format!("edge ({}, {}) on {} vertices", e.i, e.j, self.n)));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::MalformedGraph(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Export

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Dot,
    EdgeJson,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "edge-json" | "json" => Ok(Self::EdgeJson),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    n: usize,
    kind: GraphKind,
    vertices: Vec<String>,
    edges: Vec<EdgeJsonEntry>,
}

#[derive(Serialize, Deserialize)]
struct EdgeJsonEntry {
    i: usize,
    j: usize,
    source: String,
    target: String,
    weight: f64,
}

pub fn export_graph(g: &CorpGraph, format: ExportFormat, names: &[String]) -> Result<String> {
    g.validate()?;
    if names.len() != g.n {
        return Err(Error::MalformedGraph(format!("{} names for {} vertices", names.len(), g.n)));
    }
    match format {
        ExportFormat::Dot => {
            let name = match g.kind {
                GraphKind::Tree => "corp_tree",
                GraphKind::TreePlus(_) => "corp_tree_plus",
            };
            let mut out = format!("graph {name} {{\n");
            for (v, label) in names.iter().enumerate() {
                writeln!(out, "  n{v} [label=\"{label}\"];").unwrap();
            }
            for e in &g.edges {
                writeln!(out, "  n{} -- n{} [weight={:?}, label=\"{:.4}\"];", e.i, e.j, e.weight, e.weight).unwrap();
            }
            out.push_str("}\n");
            Ok(out)
        }
        ExportFormat::EdgeJson => {
            let doc = EdgeJson {
                n: g.n,
                kind: g.kind,
                vertices: names.to_vec(),
                edges: g
                    .edges
                    .iter()
                    .map(|e| EdgeJsonEntry {
                        i: e.i,
                        j: e.j,
                        source: names[e.i].clone(),
                        target: names[e.j].clone(),
                        weight: e.weight,
                    })
                    .collect(),
            };
            Ok(serde_json::to_string_pretty(&doc)?)
        }
    }
}

pub fn parse_edge_json(text: &str) -> Result<CorpGraph> {
    let doc: EdgeJson = serde_json::from_str(text)?;
    let g = CorpGraph {
        n: doc.n,
        kind: doc.kind,
        edges: doc.edges.into_iter().map(|e| Edge { i: e.i, j: e.j, weight: e.weight }).collect(),
    };
    g.validate()?;
    Ok(g)
}
