//! Dense double-precision arrays, the handful of differentiable operations the
//! model is built from, and a finite-difference gradient checker.
//!
//! Every operation is a pair of free functions: a forward pass returning a
//! fresh array, and a backward pass mapping the upstream gradient to gradients
//! of the inputs. Forward passes reject NaN/Inf outputs.

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("from_vec", format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Array2) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &Array2) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Array2) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn checked(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

// ---------------------------------------------------------------------------
// matmul

pub fn matmul(a: &Array2, b: &Array2) -> Result<Array2> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Array2::zeros(m, n);
    for i in 0..m {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (p, &av) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out.checked("matmul")
}

/// `a · bᵀ`
fn matmul_nt(a: &Array2, b: &Array2) -> Array2 {
    debug_assert_eq!(a.cols, b.cols);
    let bt = Array2::from_fn(b.cols, b.rows, |r, c| b.get(c, r));
    let n = bt.cols;
    let mut out = Array2::zeros(a.rows, n);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (p, &av) in a.row(i).iter().enumerate() {
            for (o, &bv) in out_row.iter_mut().zip(&bt.data[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b`
fn matmul_tn(a: &Array2, b: &Array2) -> Array2 {
    debug_assert_eq!(a.rows, b.rows);
    let (k, n) = (a.cols, b.cols);
    let mut out = Array2::zeros(k, n);
    for i in 0..a.rows {
        let brow = b.row(i);
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out.data[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Returns `(dA, dB) = (dOut·Bᵀ, Aᵀ·dOut)`.
pub fn matmul_backward(a: &Array2, b: &Array2, dout: &Array2) -> Result<(Array2, Array2)> {
    if dout.shape() != (a.rows, b.cols) {
        return Err(Error::shape("matmul_backward", format!("dout {:?}", dout.shape())));
    }
    Ok((matmul_nt(dout, b), matmul_tn(a, dout)))
}

// ---------------------------------------------------------------------------
// elementwise

pub fn add(a: &Array2, b: &Array2) -> Result<Array2> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} + {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.add_assign(b);
    out.checked("add")
}

pub fn add_bias(x: &Array2, b: &Array2) -> Result<Array2> {
    if b.rows != 1 || b.cols != x.cols {
        return Err(Error::shape("add_bias", format!("{:?} + {:?}", x.shape(), b.shape())));
    }
    let mut out = x.clone();
    for r in 0..out.rows {
        for (o, bv) in out.row_mut(r).iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    out.checked("add_bias")
}

/// Column sums of `dout`, the bias gradient. The input gradient is `dout` itself.
pub fn add_bias_backward(dout: &Array2) -> Array2 {
    let mut db = Array2::zeros(1, dout.cols);
    for r in 0..dout.rows {
        for (d, g) in db.data.iter_mut().zip(dout.row(r)) {
            *d += g;
        }
    }
    db
}

pub fn relu(x: &Array2) -> Array2 {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array2, dout: &Array2) -> Array2 {
    Array2 {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().zip(&dout.data).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
    }
}

pub fn tanh(x: &Array2) -> Array2 {
    x.map(f64::tanh)
}

/// Takes the forward *output*.
pub fn tanh_backward(out: &Array2, dout: &Array2) -> Array2 {
    Array2 {
        rows: out.rows,
        cols: out.cols,
        data: out.data.iter().zip(&dout.data).map(|(&y, &g)| (1.0 - y * y) * g).collect(),
    }
}

// ---------------------------------------------------------------------------
// segments and gathers

fn segment_counts(segments: &[usize], n_segments: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n_segments];
    for &s in segments {
        *counts.get_mut(s).ok_or(Error::BadSegmentId { id: s, n_segments })? += 1;
    }
    Ok(counts)
}

/// Per-segment row means. Empty segments produce zero rows.
pub fn segment_mean(x: &Array2, segments: &[usize], n_segments: usize) -> Result<Array2> {
    if segments.len() != x.rows {
        return Err(Error::shape("segment_mean", format!("{} ids for {} rows", segments.len(), x.rows)));
    }
    let counts = segment_counts(segments, n_segments)?;
    let mut out = Array2::zeros(n_segments, x.cols);
    for (r, &s) in segments.iter().enumerate() {
        let src = &x.data[r * x.cols..(r + 1) * x.cols];
        for (o, v) in out.row_mut(s).iter_mut().zip(src) {
            *o += v;
        }
    }
    for (s, &c) in counts.iter().enumerate() {
        if c > 1 {
            let inv = 1.0 / c as f64;
            out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
        }
    }
    out.checked("segment_mean")
}

pub fn segment_mean_backward(dout: &Array2, segments: &[usize], n_segments: usize) -> Result<Array2> {
    let counts = segment_counts(segments, n_segments)?;
    let mut dx = Array2::zeros(segments.len(), dout.cols);
    for (r, &s) in segments.iter().enumerate() {
        let inv = 1.0 / counts[s] as f64;
        for (d, g) in dx.row_mut(r).iter_mut().zip(dout.row(s)) {
            *d = g * inv;
        }
    }
    Ok(dx)
}

pub fn gather_rows(x: &Array2, idx: &[usize]) -> Result<Array2> {
    let mut data = Vec::with_capacity(idx.len() * x.cols);
    for &i in idx {
        if i >= x.rows {
            return Err(Error::shape("gather_rows", format!("row {i} of {}", x.rows)));
        }
        data.extend_from_slice(x.row(i));
    }
    Ok(Array2 { rows: idx.len(), cols: x.cols, data })
}

/// Scatter-add of `dout` rows back into an `n_rows`-row gradient.
pub fn gather_rows_backward(dout: &Array2, idx: &[usize], n_rows: usize) -> Array2 {
    let mut dx = Array2::zeros(n_rows, dout.cols);
    for (r, &i) in idx.iter().enumerate() {
        for (d, g) in dx.row_mut(i).iter_mut().zip(dout.row(r)) {
            *d += g;
        }
    }
    dx
}

/// Multiplies row `i` of `x` by the scalar `g[i]` (`g` is `N×1`).
pub fn scale_rows(x: &Array2, g: &Array2) -> Result<Array2> {
    if g.shape() != (x.rows, 1) {
        return Err(Error::shape("scale_rows", format!("{:?} by {:?}", x.shape(), g.shape())));
    }
    let mut out = x.clone();
    for r in 0..out.rows {
        let k = g.data[r];
        out.row_mut(r).iter_mut().for_each(|v| *v *= k);
    }
    out.checked("scale_rows")
}

pub fn scale_rows_backward(x: &Array2, g: &Array2, dout: &Array2) -> (Array2, Array2) {
    let mut dx = dout.clone();
    let mut dg = Array2::zeros(x.rows, 1);
    for r in 0..x.rows {
        let k = g.data[r];
        dx.row_mut(r).iter_mut().for_each(|v| *v *= k);
        dg.data[r] = dout.row(r).iter().zip(x.row(r)).map(|(a, b)| a * b).sum();
    }
    (dx, dg)
}

// ---------------------------------------------------------------------------
// normalization

/// `x / ‖x‖₂` over all entries.
pub fn l2_normalize(x: &Array2) -> Result<Array2> {
    let norm = x.norm();
    if norm < 1e-12 {
        return Err(Error::NonFinite("l2_normalize"));
    }
    x.scaled(1.0 / norm).checked("l2_normalize")
}

/// Takes the input and the forward output.
pub fn l2_normalize_backward(x: &Array2, out: &Array2, dout: &Array2) -> Array2 {
    let norm = x.norm();
    let proj = out.dot(dout);
    Array2 {
        rows: x.rows,
        cols: x.cols,
        data: out.data.iter().zip(&dout.data).map(|(&y, &g)| (g - y * proj) / norm).collect(),
    }
}

const ROW_NORM_FLOOR: f64 = 1e-12;

/// Normalizes each row to unit length; all-zero rows stay zero.
pub fn row_l2_normalize(x: &Array2) -> Array2 {
    let mut out = x.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(ROW_NORM_FLOOR);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

pub fn row_l2_normalize_backward(x: &Array2, out: &Array2, dout: &Array2) -> Array2 {
    let mut dx = Array2::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < ROW_NORM_FLOOR {
            for (d, g) in dx.row_mut(r).iter_mut().zip(dout.row(r)) {
                *d = g / ROW_NORM_FLOOR;
            }
            continue;
        }
        let y = out.row(r);
        let proj: f64 = y.iter().zip(dout.row(r)).map(|(a, b)| a * b).sum();
        for ((d, g), yv) in dx.row_mut(r).iter_mut().zip(dout.row(r)).zip(y) {
            *d = (g - yv * proj) / norm;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// loss

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2) -> Array2 {
    let mut probs = logits.clone();
    for r in 0..probs.rows {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    probs
}

/// Mean cross-entropy of `labels` under softmax(`logits`). With
/// `class_weights`, sample `i` contributes `w[label_i] · (−log p)`.
pub fn softmax_xent(logits: &Array2, labels: &[usize], class_weights: Option<&[f64]>) -> Result<(f64, Array2)> {
    if labels.len() != logits.rows || logits.rows == 0 {
        return Err(Error::shape("softmax_xent", format!("{} labels for {} rows", labels.len(), logits.rows)));
    }
    let classes = logits.cols;
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let row = logits.row(r);
        let top = crate::model::argmax(row);
        let max = row[top];
        // log-sum-exp relative to the max, via ln_1p for small tails
        let tail: f64 = row.iter().enumerate().filter(|&(c, _)| c != top).map(|(_, v)| (v - max).exp()).sum();
        let w = class_weights.map_or(1.0, |w| w[y]);
        loss += w * (tail.ln_1p() - (row[y] - max));
    }
    let loss = loss / labels.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_xent"));
    }
    Ok((loss, softmax(logits)))
}

pub fn softmax_xent_backward(probs: &Array2, labels: &[usize], class_weights: Option<&[f64]>) -> Array2 {
    let b = labels.len() as f64;
    let mut d = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let w = class_weights.map_or(1.0, |w| w[y]);
        let row = d.row_mut(r);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= w / b);
    }
    d
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2,
    pub grad: Array2,
}

/// Named parameters in insertion order, each with a gradient of the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let grad = Array2::zeros(value.rows, value.cols);
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Array2> {
        Ok(&self.get(name)?.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries.get_mut(name).ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Array2) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.shape() != g.shape() {
            return Err(Error::shape("accumulate_grad", format!("{name}: {:?} vs {:?}", p.grad.shape(), g.shape())));
        }
        p.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.data.len()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct StoredArray {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Serialize for ParameterStore {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let map: IndexMap<&str, StoredArray> = self
            .entries
            .iter()
            .map(|(k, p)| (k.as_str(), StoredArray { shape: [p.value.rows, p.value.cols], data: p.value.data.clone() }))
            .collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParameterStore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = IndexMap::<String, StoredArray>::deserialize(deserializer)?;
        let mut store = ParameterStore::new();
        for (name, arr) in map {
            let value = Array2::from_vec(arr.shape[0], arr.shape[1], arr.data).map_err(serde::de::Error::custom)?;
            store.insert(name, value).map_err(serde::de::Error::custom)?;
        }
        Ok(store)
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the gradients stored in `params` with central differences of `f`.
/// The relative error of a coordinate is
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(params: &ParameterStore, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    let names: Vec<String> = params.entries.keys().cloned().collect();
    for name in names {
        let analytic = params.entries[&name].grad.data.clone();
        for (k, &a) in analytic.iter().enumerate() {
            let original = probe.entries[&name].value.data[k];
            probe.entries[&name].value.data[k] = original + eps;
            let plus = f(&probe)?;
            probe.entries[&name].value.data[k] = original - eps;
            let minus = f(&probe)?;
            probe.entries[&name].value.data[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            if !err.is_finite() {
                return Err(Error::NonFiniteGradient(name));
            }
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}
