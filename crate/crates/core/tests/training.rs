mod common;

use std::cell::RefCell;
use std::collections::BTreeMap;

use camsel::dataset::{build_windows, chance_rate, CameraId, Window};
use camsel::error::Error;
use camsel::features::synth::ObservationConfig;
use camsel::features::FeatureMode;
use camsel::model::{ClassWeights, ModelConfig, TemporalModel};
use camsel::train::{
    evaluate, train, validation_metrics, ConstantPredictor, OraclePredictor, PerFrameConfig, PerFrameModel, PreparedData, SequenceData, TrainConfig,
    WindowPredictor,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prepared(data: &[SequenceData]) -> PreparedData {
    let frames: BTreeMap<String, Vec<usize>> = data.iter().map(|d| (d.id().to_string(), (0..d.len()).collect())).collect();
    PreparedData::new(data, FeatureMode::Full, &frames, true).unwrap()
}

fn all_windows(d: &SequenceData, lookback: usize, horizon: usize) -> Vec<Window> {
    let frames: Vec<usize> = (0..d.len()).collect();
    build_windows(&d.sequence, &frames, lookback, horizon, 1)
}

fn small_model(width: usize) -> ModelConfig {
    ModelConfig {
        input_dim: width,
        d_model: 8,
        conv_channels: 4,
        dropout: 0.1,
        ..ModelConfig::default()
    }
}

struct RandomPredictor(RefCell<ChaCha8Rng>);

impl WindowPredictor for RandomPredictor {
    fn predict_window(&self, w: &Window) -> camsel::Result<Vec<CameraId>> {
        let mut rng = self.0.borrow_mut();
        Ok((0..w.horizon()).map(|_| CameraId(rng.random_range(0..6))).collect())
    }
}

#[test]
fn evaluate_reference_predictors() {
    let data = synth_data(&[mixed_scenario("E", 1700, 0.3, 1)]);
    let p = prepared(&data);
    let windows = all_windows(&data[0], 12, 6);
    assert_eq!(evaluate(&OraclePredictor(&p), &windows, &p).unwrap().accuracy, 1.0);

    // independent recount of camera 0 over every evaluated step
    let truth: Vec<CameraId> = windows.iter().flat_map(|w| w.target_span.clone().map(|t| data[0].labels[t])).collect();
    let zeros = truth.iter().filter(|c| c.0 == 0).count();
    let e = evaluate(&ConstantPredictor(CameraId(0)), &windows, &p).unwrap();
    assert_eq!(e.correct, zeros);
    assert_eq!(e.steps, truth.len());
    assert_eq!(e.chance_rate, chance_rate(&truth).unwrap());

    let e = evaluate(&RandomPredictor(RefCell::new(ChaCha8Rng::seed_from_u64(3))), &windows, &p).unwrap();
    assert!(e.steps >= 10_000);
    let n = e.steps as f64;
    let sigma = (n * (1.0 / 6.0) * (5.0 / 6.0)).sqrt() / n;
    assert!((e.accuracy - 1.0 / 6.0).abs() <= 3.0 * sigma, "{} vs 1/6 ± {}", e.accuracy, 3.0 * sigma);
}

#[test]
fn empty_test_set_is_a_protocol_error() {
    let data = synth_data(&[mixed_scenario("E", 40, 0.3, 1)]);
    let p = prepared(&data);
    assert!(matches!(evaluate(&ConstantPredictor(CameraId(0)), &[], &p), Err(Error::Protocol(_))));
}

#[test]
fn same_seed_same_history() {
    let data = synth_data(&[mixed_scenario("D", 120, 0.3, 2)]);
    let p = prepared(&data);
    let windows = all_windows(&data[0], 12, 6);
    let (tr, va) = windows.split_at(80);
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let model = TemporalModel::new(small_model(p.width()), 4).unwrap();
        train(model, &p, tr, va, &cfg, &ClassWeights::uniform(6)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.steps, 3 * 80usize.div_ceil(8) as u64);
}

#[test]
fn patience_one_stops_after_second_epoch_when_validation_worsens() {
    let base = synth_data(&[mixed_scenario("A", 60, 0.3, 3)]).remove(0);
    let mut a = base.clone();
    a.labels = vec![CameraId(0); a.len()];
    let mut b = base;
    b.sequence.id = "B".into();
    b.labels = vec![CameraId(1); b.len()];
    let data = [a, b];
    let p = prepared(&data);
    let tr = all_windows(&data[0], 12, 6);
    let va = all_windows(&data[1], 12, 6);
    let cfg = TrainConfig {
        max_epochs: 10,
        patience: 1,
        ..TrainConfig::default()
    };
    let model = TemporalModel::new(small_model(p.width()), 0).unwrap();
    let out = train(model, &p, &tr, &va, &cfg, &ClassWeights::uniform(6)).unwrap();
    let losses: Vec<f64> = out.history.epochs.iter().map(|e| e.val_loss).collect();
    assert!(losses[1] > losses[0], "{losses:?}");
    assert_eq!(out.history.epochs.len(), 2);
    assert!(out.history.stopped_early);
    assert_eq!(out.history.best_epoch, 1);
}

#[test]
fn returned_parameters_are_the_best_validation_epoch() {
    let data = synth_data(&[mixed_scenario("B", 200, 0.4, 5)]);
    let p = prepared(&data);
    let windows = all_windows(&data[0], 12, 6);
    let (tr, va) = windows.split_at(140);
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 3,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let weights = ClassWeights::uniform(6);
    let model = TemporalModel::new(small_model(p.width()), 1).unwrap();
    let out = train(model, &p, tr, va, &cfg, &weights).unwrap();
    let h = &out.history;
    let best = h.epochs[h.best_epoch - 1].val_loss;
    assert!(h.epochs.iter().all(|e| e.val_loss >= best));
    let (loss, acc) = validation_metrics(&out.model, &p, va, &weights).unwrap();
    assert_eq!(loss, best);
    assert_eq!(acc, h.epochs[h.best_epoch - 1].val_accuracy);
}

#[test]
fn training_input_errors() {
    let data = synth_data(&[mixed_scenario("C", 60, 0.3, 6)]);
    let p = prepared(&data);
    let windows = all_windows(&data[0], 12, 6);
    let cfg = TrainConfig::default();
    let w = ClassWeights::uniform(6);
    let model = TemporalModel::new(small_model(p.width()), 0).unwrap();
    assert!(matches!(train(model.clone(), &p, &[], &windows, &cfg, &w), Err(Error::Config(_))));
    assert!(matches!(train(model, &p, &windows, &[], &cfg, &w), Err(Error::Config(_))));
    let wrong = TemporalModel::new(small_model(p.width() + 1), 0).unwrap();
    assert!(matches!(train(wrong, &p, &windows, &windows, &cfg, &w), Err(Error::Shape { .. })));
    let bad = TrainConfig {
        patience: 11,
        ..cfg
    };
    let model = TemporalModel::new(small_model(p.width()), 0).unwrap();
    assert!(matches!(train(model, &p, &windows, &windows, &bad, &w), Err(Error::Config(_))));
}

#[test]
fn per_frame_baseline_cannot_beat_chance_without_per_frame_signal() {
    let blind = ObservationConfig {
        periodic_gain: 0.0,
        markov_gain: 0.0,
        noise: 0.3,
    };
    let scenario = camsel::features::synth::ScenarioConfig {
        visual: blind,
        semantic: blind,
        ..mixed_scenario("T", 900, 0.0, 7)
    };
    let data = synth_data(&[scenario]);
    let p = prepared(&data);
    let frames: Vec<(String, usize)> = (0..900).map(|t| ("T".to_string(), t)).collect();
    let (tr, rest) = frames.split_at(600);
    let (va, te) = rest.split_at(100);
    let m = PerFrameModel::train(&p, tr, va, 6, &PerFrameConfig::default(), &ClassWeights::uniform(6)).unwrap();
    let test: Vec<CameraId> = te.iter().map(|(_, t)| data[0].labels[*t]).collect();
    let correct = te
        .iter()
        .zip(&test)
        .filter(|((id, t), y)| m.predict_frame(p.frame(id, *t)) == **y)
        .count();
    let acc = correct as f64 / te.len() as f64;
    let chance = chance_rate(&test).unwrap();
    assert!(acc <= chance + 0.05, "accuracy {acc} vs chance {chance}");
}

#[test]
fn per_frame_baseline_is_deterministic() {
    let data = synth_data(&[mixed_scenario("P", 200, 0.2, 8)]);
    let p = prepared(&data);
    let frames: Vec<(String, usize)> = (0..200).map(|t| ("P".to_string(), t)).collect();
    let cfg = PerFrameConfig {
        max_epochs: 3,
        ..PerFrameConfig::default()
    };
    let w = ClassWeights::uniform(6);
    let a = PerFrameModel::train(&p, &frames[..150], &frames[150..], 6, &cfg, &w).unwrap();
    let b = PerFrameModel::train(&p, &frames[..150], &frames[150..], 6, &cfg, &w).unwrap();
    assert_eq!(a, b);
}
