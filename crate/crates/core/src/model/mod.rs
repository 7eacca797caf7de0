//! Temporal camera-selection network: embedding, TimesBlocks, horizon
//! projection and softmax head, with exact gradients for training.

mod checkpoint;
mod config;
mod network;
mod params;
mod periods;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_FORMAT};
pub use config::{InnerActivation, ModelConfig};
pub use network::{embed, forward, positional_encoding, softmax_rows, times_block_forward, Mode, LAYER_NORM_EPS};
pub use params::{BlockParams, Conv, Inception, Params};
pub use periods::{amplitude_spectrum, detect_periods, PeriodEntry, PeriodSet};

use crate::dataset::CameraId;
use crate::error::{Error, Result};

/// Probability floor inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// H × N camera probabilities, one row per horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSequence(pub Array2<f64>);

impl ProbSequence {
    pub fn horizon(&self) -> usize {
        self.0.nrows()
    }

    pub fn cameras(&self) -> usize {
        self.0.ncols()
    }
}

/// Per-step argmax. Ties go to the lowest camera index.
pub fn predict_labels(probs: &ProbSequence) -> Vec<CameraId> {
    argmax_rows(probs.0.view())
}

pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<CameraId> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            CameraId(best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }
}

/// Inverse-frequency weights `total / (C * count)`, rescaled to mean 1.
/// A class with no examples gets the largest weight among present classes.
pub fn class_weights(histogram: &[usize]) -> Result<ClassWeights> {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return Err(Error::Domain("class weights need at least one labeled example".into()));
    }
    let c = histogram.len() as f64;
    let raw: Vec<Option<f64>> = histogram
        .iter()
        .map(|&n| (n > 0).then(|| total as f64 / (c * n as f64)))
        .collect();
    let max = raw.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let w: Vec<f64> = raw.iter().map(|r| r.unwrap_or(max)).collect();
    let mean = w.iter().sum::<f64>() / c;
    Ok(ClassWeights(w.iter().map(|v| v / mean).collect()))
}

fn check_batch(probs: &[ProbSequence], labels: &[Vec<CameraId>], classes: Option<usize>) -> Result<()> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::shape("loss", format!("{} label rows", probs.len()), labels.len()));
    }
    for (p, y) in probs.iter().zip(labels) {
        if p.horizon() != y.len() {
            return Err(Error::shape("loss", format!("{} steps", p.horizon()), y.len()));
        }
        if let Some(c) = classes {
            if p.cameras() != c {
                return Err(Error::shape("loss", format!("{c} classes"), p.cameras()));
            }
        }
        if let Some(bad) = y.iter().find(|c| c.0 >= p.cameras()) {
            return Err(Error::shape("loss", format!("label < {}", p.cameras()), bad.0));
        }
    }
    Ok(())
}

/// Mean over every (sample, step) pair of `-w[y] * ln max(p[y], 1e-12)`.
pub fn weighted_cross_entropy(probs: &[ProbSequence], labels: &[Vec<CameraId>], weights: &ClassWeights) -> Result<f64> {
    check_batch(probs, labels, Some(weights.0.len()))?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, y) in probs.iter().zip(labels) {
        for (h, c) in y.iter().enumerate() {
            sum += -weights.0[c.0] * p.0[[h, c.0]].max(PROB_FLOOR).ln();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

pub fn cross_entropy(probs: &[ProbSequence], labels: &[Vec<CameraId>]) -> Result<f64> {
    check_batch(probs, labels, None)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, y) in probs.iter().zip(labels) {
        for (h, c) in y.iter().enumerate() {
            sum += -p.0[[h, c.0]].max(PROB_FLOOR).ln();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModel {
    pub config: ModelConfig,
    pub params: Params,
}

pub struct BatchOutput {
    pub loss: f64,
    pub grads: Params,
    pub probs: Vec<ProbSequence>,
}

impl TemporalModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode) -> Result<ProbSequence> {
        forward(x, &self.params, &self.config, mode)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<CameraId>> {
        self.forward(x, Mode::Eval).map(|p| predict_labels(&p))
    }

    /// Weighted cross-entropy over the batch and its exact gradient.
    pub fn loss_and_gradients(
        &self,
        batch: &[(ArrayView2<f64>, &[CameraId])],
        weights: &ClassWeights,
        mut mode: Mode,
    ) -> Result<BatchOutput> {
        let cfg = &self.config;
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if weights.0.len() != cfg.cameras {
            return Err(Error::shape("loss", format!("{} class weights", cfg.cameras), weights.0.len()));
        }
        let count = (batch.len() * cfg.horizon) as f64;
        let mut grads = self.params.zeros_like();
        let mut probs = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (x, y) in batch {
            if y.len() != cfg.horizon {
                return Err(Error::shape("loss", format!("{} target steps", cfg.horizon), y.len()));
            }
            let trace = network::forward_trace(*x, &self.params, cfg, &mut mode)?;
            let mut dlogits = trace.probs.clone();
            for (h, c) in y.iter().enumerate() {
                if c.0 >= cfg.cameras {
                    return Err(Error::shape("loss", format!("label < {}", cfg.cameras), c.0));
                }
                let w = weights.0[c.0];
                let p = trace.probs[[h, c.0]];
                loss += -w * p.max(PROB_FLOOR).ln();
                let mut row = dlogits.row_mut(h);
                if p >= PROB_FLOOR {
                    row[c.0] -= 1.0;
                    row.mapv_inplace(|v| v * w / count);
                } else {
                    row.fill(0.0);
                }
            }
            network::backward(*x, &self.params, cfg, &trace, &dlogits, &mut grads);
            probs.push(ProbSequence(trace.probs));
        }
        Ok(BatchOutput {
            loss: loss / count,
            grads,
            probs,
        })
    }
}
