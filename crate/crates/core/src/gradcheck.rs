//! Finite-difference verification of every differentiable operation and of
//! the full model loss on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{self as dc, grad_check, Array2, GradCheckReport, ParameterStore};
use crate::error::Result;
use crate::model::{self, GraphBatch, GraphSample, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_error: f64,
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2 {
    Array2::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

/// Uniform in ±[1e-3, 2], away from the ReLU kink.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2 {
    Array2::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(1e-3..2.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Checks one op through the scalar probe `⟨R, op(inputs)⟩` with a random
/// `R`, whose gradient is the op's backward applied to `R`.
fn check_op<F, B>(inputs: Vec<(&str, Array2)>, eps: f64, rng: &mut ChaCha8Rng, forward: F, backward: B) -> Result<f64>
where
    F: Fn(&[&Array2]) -> Result<Array2>,
    B: Fn(&[&Array2], &Array2) -> Result<Vec<Array2>>,
{
    let mut store = ParameterStore::new();
    for (name, value) in inputs {
        store.insert(name, value)?;
    }
    let values = |s: &ParameterStore| s.iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>();
    let current = values(&store);
    let refs: Vec<&Array2> = current.iter().collect();
    let out = forward(&refs)?;
    let probe = uniform(out.rows(), out.cols(), rng);
    let grads = backward(&refs, &probe)?;
    for ((_, p), g) in store.iter_mut().zip(grads) {
        p.grad = g;
    }
    let report = grad_check(&store, eps, |s| {
        let v = values(s);
        let r: Vec<&Array2> = v.iter().collect();
        Ok(forward(&r)?.dot(&probe))
    })?;
    Ok(report.max_rel_error)
}

/// Gradient checks of every op in [`crate::diffcore`] on random inputs.
pub fn op_suite(seed: u64, eps: f64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |op, err| out.push(OpCheck { op, max_rel_error: err });

    let (a, b) = (uniform(3, 4, &mut rng), uniform(4, 2, &mut rng));
    record("matmul", check_op(vec![("a", a), ("b", b)], eps, &mut rng, |x| dc::matmul(x[0], x[1]), |x, d| {
        let (da, db) = dc::matmul_backward(x[0], x[1], d)?;
        Ok(vec![da, db])
    })?);

    let (x, bias) = (uniform(4, 3, &mut rng), uniform(1, 3, &mut rng));
    record("add_bias", check_op(vec![("x", x), ("b", bias)], eps, &mut rng, |x| dc::add_bias(x[0], x[1]), |_, d| {
        Ok(vec![d.clone(), dc::add_bias_backward(d)])
    })?);

    let (x, y) = (uniform(3, 3, &mut rng), uniform(3, 3, &mut rng));
    record("add", check_op(vec![("x", x), ("y", y)], eps, &mut rng, |x| dc::add(x[0], x[1]), |_, d| {
        Ok(vec![d.clone(), d.clone()])
    })?);

    let x = away_from_zero(4, 5, &mut rng);
    record("relu", check_op(vec![("x", x)], eps, &mut rng, |x| Ok(dc::relu(x[0])), |x, d| {
        Ok(vec![dc::relu_backward(x[0], d)])
    })?);

    let x = uniform(4, 5, &mut rng);
    record("tanh", check_op(vec![("x", x)], eps, &mut rng, |x| Ok(dc::tanh(x[0])), |x, d| {
        Ok(vec![dc::tanh_backward(&dc::tanh(x[0]), d)])
    })?);

    let x = uniform(6, 3, &mut rng);
    let segments = [0, 2, 0, 2, 2, 3];
    record("segment_mean", check_op(vec![("x", x)], eps, &mut rng, |x| dc::segment_mean(x[0], &segments, 4), |_, d| {
        Ok(vec![dc::segment_mean_backward(d, &segments, 4)?])
    })?);

    let x = uniform(4, 3, &mut rng);
    let idx = [2, 0, 2, 3, 2];
    record("gather_rows", check_op(vec![("x", x)], eps, &mut rng, |x| dc::gather_rows(x[0], &idx), |_, d| {
        Ok(vec![dc::gather_rows_backward(d, &idx, 4)])
    })?);

    let (x, g) = (uniform(5, 3, &mut rng), uniform(5, 1, &mut rng));
    record("scale_rows", check_op(vec![("x", x), ("g", g)], eps, &mut rng, |x| dc::scale_rows(x[0], x[1]), |x, d| {
        let (dx, dg) = dc::scale_rows_backward(x[0], x[1], d);
        Ok(vec![dx, dg])
    })?);

    let p = uniform(6, 1, &mut rng);
    record("l2_normalize", check_op(vec![("p", p)], eps, &mut rng, |x| dc::l2_normalize(x[0]), |x, d| {
        Ok(vec![dc::l2_normalize_backward(x[0], &dc::l2_normalize(x[0])?, d)])
    })?);

    let x = uniform(4, 3, &mut rng);
    record("row_l2_normalize", check_op(vec![("x", x)], eps, &mut rng, |x| Ok(dc::row_l2_normalize(x[0])), |x, d| {
        Ok(vec![dc::row_l2_normalize_backward(x[0], &dc::row_l2_normalize(x[0]), d)])
    })?);

    // The loss is already a scalar: check it directly.
    let logits = uniform(5, 4, &mut rng);
    let labels = [0, 3, 1, 1, 2];
    let weights = [0.5, 1.5, 1.0, 2.0];
    for (op, w) in [("softmax_xent", None), ("softmax_xent_weighted", Some(&weights[..]))] {
        let mut store = ParameterStore::new();
        store.insert("logits", logits.clone())?;
        let (_, probs) = dc::softmax_xent(&logits, &labels, w)?;
        store.get_mut("logits")?.grad = dc::softmax_xent_backward(&probs, &labels, w);
        let report = grad_check(&store, eps, |s| Ok(dc::softmax_xent(s.value("logits")?, &labels, w)?.0))?;
        record(op, report.max_rel_error);
    }
    Ok(out)
}

fn random_sample(n: usize, width: usize, classes: usize, rng: &mut ChaCha8Rng) -> GraphSample {
    let features = Array2::from_fn(n, width, |_, _| rng.random_range(-2.0..2.0));
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    let a = rng.random_range(0..n - 1);
    let b = rng.random_range(a + 1..n);
    if !edges.contains(&(a, b)) {
        edges.push((a, b));
    }
    GraphSample { features, edges, label: rng.random_range(0..classes) }
}

/// A random two-graph batch for model-level checks.
pub fn random_batch(seed: u64, width: usize, classes: usize) -> Result<GraphBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let a = random_sample(rng.random_range(5..9), width, classes, &mut rng);
    let b = random_sample(rng.random_range(5..9), width, classes, &mut rng);
    GraphBatch::from_samples([&a, &b])
}

/// Full-model loss gradient check on a random two-graph batch, with biases
/// randomized so no unit starts exactly at a ReLU kink.
pub fn model_check(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::new(4, 3, seed);
    let mut params = model::init_params(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    for (name, p) in params.iter_mut() {
        if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            p.value = Array2::from_fn(p.value.rows(), p.value.cols(), |_, _| rng.random_range(-0.1..0.1));
        }
    }
    let batch = random_batch(seed, cfg.node_in_dim, cfg.num_classes)?;
    model::loss_and_grad(&batch, &mut params, &cfg, None)?;
    grad_check(&params, eps, |s| model::batch_loss(&batch, s, &cfg, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for seed in 0..3 {
            for check in op_suite(seed, 1e-5).unwrap() {
                assert!(check.max_rel_error < 1e-6, "seed {seed}: {check:?}");
            }
        }
    }

    #[test]
    fn full_model_passes() {
        let report = model_check(1, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.coordinates, 8803);
    }
}
