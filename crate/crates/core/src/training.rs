//! Mini-batch training: cosine-annealed learning rate with warm restarts,
//! Adam / SGD-momentum updates, best-validation early stopping, checkpoints.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Standardizer;
use crate::diffcore::{Array2, ParameterStore};
use crate::error::{Error, Result};
use crate::model::{self, GraphBatch, GraphSample, ModelConfig};
use crate::pipeline::DataConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the first cosine cycle, in epochs.
    pub restart_period: f64,
    /// Growth factor of successive cycle lengths.
    pub restart_mult: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr_max: 1e-3,
            lr_min: 1e-5,
            restart_period: 10.0,
            restart_mult: 2.0,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            early_stop_patience: 30,
            class_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr_min < self.lr_max && self.lr_min >= 0.0) {
            return bad("need 0 <= lr_min < lr_max");
        }
        if self.restart_period < 1.0 || self.restart_mult < 1.0 {
            return bad("restart period and multiplier must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight decay >= 0");
        }
        Ok(())
    }
}

/// SGDR learning rate at fractional epoch `t`: cycles of length
/// `T_0, T_0·T_mult, ...`, each decaying from `lr_max` to `lr_min` along a
/// half cosine.
pub fn warm_restart_lr(t: f64, cfg: &TrainConfig) -> f64 {
    let mut pos = t.max(0.0);
    let mut len = cfg.restart_period;
    if cfg.restart_mult == 1.0 {
        pos %= len;
    } else {
        while pos >= len {
            pos -= len;
            len *= cfg.restart_mult;
        }
    }
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * pos / len).cos())
}

// ---------------------------------------------------------------------------
// Optimizers

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// First moment (Adam) or velocity (SGD), in parameter order.
    pub first: Vec<Array2>,
    /// Second moment; empty for SGD.
    pub second: Vec<Array2>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterStore, kind: OptimizerKind) -> Self {
        let zeros = || params.iter().map(|(_, p)| Array2::zeros(p.value.rows(), p.value.cols())).collect::<Vec<_>>();
        Self {
            first: zeros(),
            second: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
            step: 0,
        }
    }
}

pub fn optimizer_step(params: &mut ParameterStore, state: &mut OptimizerState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad.data().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let decay = 1.0 - lr * cfg.weight_decay;
    match cfg.optimizer {
        OptimizerKind::Adam => {
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for (i, (_, p)) in params.iter_mut().enumerate() {
                let m = state.first[i].data_mut();
                let v = state.second[i].data_mut();
                let grad = p.grad.data().to_vec();
                for (k, (theta, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = m[k] / c1;
                    let v_hat = v[k] / c2;
                    *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
        OptimizerKind::Sgd => {
            for (i, (_, p)) in params.iter_mut().enumerate() {
                let vel = state.first[i].data_mut();
                let grad = p.grad.data().to_vec();
                for (k, (theta, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                    vel[k] = cfg.momentum * vel[k] + g;
                    *theta = *theta * decay - lr * vel[k];
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Batching

/// Sample order for `epoch`, a deterministic shuffle keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn make_batches(samples: &[GraphSample], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<GraphBatch>> {
    let order = epoch_order(samples.len(), seed, epoch);
    order.chunks(batch_size.max(1)).map(|chunk| GraphBatch::from_samples(chunk.iter().map(|&i| &samples[i]))).collect()
}

/// Batches in the given order, for evaluation.
pub fn sequential_batches(samples: &[GraphSample], batch_size: usize) -> Result<Vec<GraphBatch>> {
    samples.chunks(batch_size.max(1)).map(GraphBatch::from_samples).collect()
}

// ---------------------------------------------------------------------------
// Evaluation and fitting

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub probabilities: Array2,
}

pub fn evaluate(samples: &[GraphSample], params: &ParameterStore, cfg: &ModelConfig, batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut probs = Vec::with_capacity(samples.len() * cfg.num_classes);
    for batch in sequential_batches(samples, batch_size)? {
        let (logits, _) = model::model_forward(&batch, params, cfg)?;
        let (loss, p) = crate::diffcore::softmax_xent(&logits, &batch.labels, None)?;
        loss_sum += loss * batch.num_graphs as f64;
        for r in 0..p.rows() {
            predictions.push(model::argmax(p.row(r)));
        }
        labels.extend_from_slice(&batch.labels);
        probs.extend_from_slice(p.data());
    }
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: loss_sum / samples.len() as f64,
        accuracy: correct as f64 / samples.len() as f64,
        predictions,
        labels,
        probabilities: Array2::from_vec(samples.len(), cfg.num_classes, probs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ParameterStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Inverse-frequency weights normalized to average 1 over the samples.
pub fn inverse_frequency_weights(samples: &[GraphSample], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for s in samples {
        counts[s.label] += 1;
    }
    counts.iter().map(|&c| if c == 0 { 0.0 } else { samples.len() as f64 / (classes as f64 * c as f64) }).collect()
}

/// Trains from `init_params(model_cfg)`. When `val` is empty the training
/// loss drives model selection instead.
pub fn fit(train: &[GraphSample], val: &[GraphSample], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = model::init_params(model_cfg)?;
    let mut state = OptimizerState::new(&params, cfg.optimizer);
    let weights = cfg.class_weights.then(|| inverse_frequency_weights(train, model_cfg.num_classes));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(train, cfg.batch_size, cfg.seed, epoch)?;
        let n_batches = batches.len() as f64;
        let lr_start = warm_restart_lr(epoch as f64, cfg);
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let lr = warm_restart_lr(epoch as f64 + b as f64 / n_batches, cfg);
            let loss = model::loss_and_grad(batch, &mut params, model_cfg, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::Diverged(epoch + 1));
            }
            loss_sum += loss * batch.num_graphs as f64;
            optimizer_step(&mut params, &mut state, lr, cfg)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged(epoch + 1));
        }

        let (val_loss, val_acc) = if val.is_empty() {
            (train_loss, f64::NAN)
        } else {
            let e = evaluate(val, &params, model_cfg, cfg.batch_size.max(64))?;
            (e.loss, e.accuracy)
        };
        history.push(EpochRecord { epoch: epoch + 1, lr: lr_start, train_loss, val_loss, val_acc });

        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch + 1);
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (_, mut params, best_epoch) = best;
    params.zero_grad();
    Ok(FitResult { params, history, best_epoch })
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,train_loss,val_loss,val_acc")?;
    for r in history {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_loss, r.val_acc)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub standardizer: Standardizer,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, train: TrainConfig, data: DataConfig, standardizer: Standardizer, params: ParameterStore) -> Self {
        Self { format_version: CHECKPOINT_FORMAT_VERSION, model, train, data, standardizer, params }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptCheckpoint("missing format_version".into()))?;
        if found != CHECKPOINT_FORMAT_VERSION as u64 {
            return Err(Error::FormatVersionMismatch { found: found as u32, expected: CHECKPOINT_FORMAT_VERSION });
        }
        serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
