//! Training loop, evaluation, baselines and the Sequence-Out and
//! Surgery-Out protocol runners.

mod baseline;
mod data;
mod eval;
mod predict;
mod protocol;
mod report;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{
    area_scores, baseline_area_dijkstra, path_cost, AreaPathPredictor, PerFrameConfig, PerFrameModel,
    PerFramePredictor,
};
pub use data::{PreparedData, SequenceData};
pub use eval::{evaluate, ConstantPredictor, Evaluation, ModelPredictor, OraclePredictor, WindowPredictor};
pub use predict::predict_sequence;
pub use protocol::{
    apply_overrides, check_leakage, evaluate_pooled, fingerprint, parse_config, run_experiment, run_sequence_out, run_surgery_out, train_pooled,
    BaselineKind, ExperimentConfig, ProtocolKind, RunRow, Trained,
};
pub use report::{MetricsReport, ProtocolReport};

use crate::dataset::{CameraId, Window};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::model::{ClassWeights, Mode, Params, RngState, TemporalModel};

/// Picks the columns an ablation keeps. Returns the fused width the model
/// must be built for.
pub fn ablate(dims: &crate::features::FeatureDims, mode: FeatureMode) -> usize {
    mode.width(dims)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a `min_delta` improvement of validation loss before
    /// stopping.
    pub patience: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 10,
            patience: 5,
            lr: 1e-3,
            lr_decay_factor: 0.5,
            plateau_patience: 2,
            min_lr: 1e-6,
            min_delta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr > 0.0 && self.min_lr > 0.0) {
            return Err(Error::Config("lr and min_lr must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::Config("lr_decay_factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|(_, _, t)| t.len()).collect();
        Self::for_sizes(&sizes, cfg)
    }

    pub fn for_sizes(sizes: &[usize], cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        let p = params.tensors_mut().into_iter().map(|(_, t)| t).collect();
        let g = grads.tensors().into_iter().map(|(_, _, t)| t).collect();
        self.update_tensors(p, g, lr);
    }

    pub fn update_tensors(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        assert_eq!(params.len(), self.m.len(), "tensor count changed");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once validation loss has gone
/// `patience` epochs without improving by `min_delta`; never below `floor`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub floor: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64, floor: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_delta,
            floor,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying `val_losses` through a fresh scheduler.
pub fn lr_on_plateau(val_losses: &[f64], lr: f64, factor: f64, plateau_patience: usize, min_delta: f64, floor: f64) -> f64 {
    let mut s = PlateauScheduler::new(lr, factor, plateau_patience, min_delta, floor);
    for &l in val_losses {
        s.observe(l);
    }
    s.lr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TemporalModel,
    pub history: History,
    pub steps: u64,
    pub rng: RngState,
}

/// Eval-mode loss and per-step accuracy over windows.
pub fn validation_metrics(
    model: &TemporalModel,
    data: &PreparedData,
    windows: &[Window],
    weights: &ClassWeights,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut steps = 0usize;
    for chunk in windows.chunks(64) {
        let batch: Vec<(ArrayView2<f64>, &[CameraId])> = chunk.iter().map(|w| (data.input(w), data.target(w))).collect();
        let out = model.eval_loss(&batch, weights)?;
        loss += out.0 * (chunk.len() * model.config.horizon) as f64;
        correct += out.1;
        steps += chunk.len() * model.config.horizon;
    }
    Ok((loss / steps as f64, correct as f64 / steps as f64))
}

impl TemporalModel {
    /// Loss and number of correct steps without gradients.
    fn eval_loss(&self, batch: &[(ArrayView2<f64>, &[CameraId])], weights: &ClassWeights) -> Result<(f64, usize)> {
        let mut probs = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut correct = 0;
        for (x, y) in batch {
            let p = self.forward(*x, Mode::Eval)?;
            correct += crate::model::predict_labels(&p).iter().zip(y.iter()).filter(|(a, b)| a == b).count();
            probs.push(p);
            labels.push(y.to_vec());
        }
        Ok((crate::model::weighted_cross_entropy(&probs, &labels, weights)?, correct))
    }
}

/// Mini-batch training with a seeded shuffle, plateau learning-rate decay
/// and early stopping on validation loss. Returns the parameters of the
/// epoch with the lowest validation loss.
pub fn train(
    mut model: TemporalModel,
    data: &PreparedData,
    train_windows: &[Window],
    val_windows: &[Window],
    cfg: &TrainConfig,
    weights: &ClassWeights,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    if val_windows.is_empty() {
        return Err(Error::Config("no validation windows for early stopping".into()));
    }
    if data.width() != model.config.input_dim {
        return Err(Error::shape("train", model.config.input_dim, data.width()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_decay_factor, cfg.plateau_patience, cfg.min_delta, cfg.min_lr);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Params)> = None;
    let mut stop_ref = f64::INFINITY;
    let mut wait = 0usize;
    let horizon = model.config.horizon;

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(ArrayView2<f64>, &[CameraId])> = chunk
                .iter()
                .map(|&i| (data.input(&train_windows[i]), data.target(&train_windows[i])))
                .collect();
            let out = model.loss_and_gradients(&batch, weights, Mode::Train(&mut rng))?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            loss_sum += out.loss * (chunk.len() * horizon) as f64;
            for (p, (_, y)) in out.probs.iter().zip(&batch) {
                correct += crate::model::predict_labels(p).iter().zip(y.iter()).filter(|(a, b)| a == b).count();
            }
            adam.update(&mut model.params, &out.grads, lr);
        }
        let steps = (train_windows.len() * horizon) as f64;
        let (val_loss, val_accuracy) = validation_metrics(&model, data, val_windows, weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps,
            train_accuracy: correct as f64 / steps,
            val_loss,
            val_accuracy,
            lr,
        });
        // keep any strict improvement, but only a min_delta one resets patience
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params.clone()));
            history.best_epoch = epoch;
        }
        if val_loss < stop_ref - cfg.min_delta {
            stop_ref = val_loss;
            wait = 0;
        } else {
            wait += 1;
        }
        sched.observe(val_loss);
        if wait >= cfg.patience && epoch < cfg.max_epochs {
            history.stopped_early = true;
            break;
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        steps: adam.steps(),
        rng: RngState::capture(&rng),
    })
}
