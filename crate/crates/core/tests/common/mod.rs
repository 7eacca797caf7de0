#![allow(dead_code)]

use camsel::dataset::{CameraId, FrameSet, ImageRef, SurgerySequence};
use camsel::features::synth::{synth_generate, MarkovOccluder, ObservationConfig, PeriodicOccluder, ScenarioConfig};
use camsel::model::{ClassWeights, InnerActivation, ModelConfig, Mode, TemporalModel};
use camsel::train::SequenceData;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The smallest configuration that still exercises every layer.
pub fn tiny_config(lookback: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 5,
        d_model: 4,
        num_blocks: 1,
        top_k: 2,
        dropout: 0.0,
        lookback,
        horizon: 2,
        cameras: 3,
        conv_channels: 3,
        kernel_sizes: vec![1, 3],
        inner_activation: InnerActivation::Gelu,
    }
}

pub fn random_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<(Array2<f64>, Vec<CameraId>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = Array2::from_shape_fn((cfg.lookback, cfg.input_dim), |_| rng.sample::<f64, _>(StandardNormal));
            let y = (0..cfg.horizon).map(|_| CameraId(rng.random_range(0..cfg.cameras))).collect();
            (x, y)
        })
        .collect()
}

pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central differences against the analytic gradient of every parameter.
/// With `dropout_seed` the same mask is drawn for every evaluation.
pub fn grad_check(model: &TemporalModel, batch: &[(Array2<f64>, Vec<CameraId>)], weights: &ClassWeights, dropout_seed: Option<u64>) -> GradReport {
    let views: Vec<_> = batch.iter().map(|(x, y)| (x.view(), y.as_slice())).collect();
    let run = |m: &TemporalModel| {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed.unwrap_or(0));
        let mode = if dropout_seed.is_some() { Mode::Train(&mut rng) } else { Mode::Eval };
        m.loss_and_gradients(&views, weights, mode).expect("loss")
    };
    let analytic = run(model).grads;
    let analytic: Vec<(String, Vec<f64>)> = analytic.tensors().into_iter().map(|(n, _, v)| (n, v.to_vec())).collect();
    let eps = 1e-5;
    let mut probe = model.clone();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.params.tensors_mut()[ti].1[i];
            probe.params.tensors_mut()[ti].1[i] = orig + eps;
            let up = run(&probe).loss;
            probe.params.tensors_mut()[ti].1[i] = orig - eps;
            let down = run(&probe).loss;
            probe.params.tensors_mut()[ti].1[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}] analytic {a:e} numeric {numeric:e}");
            }
            report.checked += 1;
        }
    }
    report
}

/// A contiguous sequence of `frames` keyframes with no labels.
pub fn bare_sequence(id: &str, frames: usize, cameras: usize) -> SurgerySequence {
    let sets = (0..frames)
        .map(|t| FrameSet {
            timestamp: t as u64,
            images: (0..cameras).map(|c| ImageRef(format!("synthetic://{id}/{t}/{c}"))).collect(),
        })
        .collect();
    SurgerySequence::new(id, cameras, sets)
}

/// Periodic plus sticky Markov occlusion, both observed by both feature
/// halves through noise of the given scale.
pub fn mixed_scenario(id: &str, length: usize, obs_noise: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        id: id.into(),
        cameras: 6,
        length,
        periodic: vec![PeriodicOccluder {
            period: 6.0,
            amplitude: 1.0,
            phase: -std::f64::consts::PI / 6.0,
        }],
        markov: Some(MarkovOccluder::sticky(6, 0.8, 0.9)),
        noise: 0.05,
        visual: ObservationConfig {
            periodic_gain: 1.0,
            markov_gain: 1.0,
            noise: obs_noise,
        },
        semantic: ObservationConfig {
            periodic_gain: 1.0,
            markov_gain: 1.0,
            noise: obs_noise,
        },
        visual_dim: 8,
        appearance_seed: 0,
        seed,
    }
}

/// Visual features see only the periodic occluder and semantic features
/// only the Markov one.
pub fn split_signal_scenario(id: &str, length: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        markov: Some(MarkovOccluder::sticky(6, 0.8, 0.97)),
        visual: ObservationConfig {
            periodic_gain: 1.0,
            markov_gain: 0.0,
            noise: 0.2,
        },
        semantic: ObservationConfig {
            periodic_gain: 0.0,
            markov_gain: 1.0,
            noise: 0.2,
        },
        ..mixed_scenario(id, length, 0.2, seed)
    }
}

pub fn synth_data(scenarios: &[ScenarioConfig]) -> Vec<SequenceData> {
    scenarios
        .iter()
        .map(|s| SequenceData::from_synth(&synth_generate(s).expect("scenario")).expect("data"))
        .collect()
}
