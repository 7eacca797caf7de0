//! Synthetic multi-camera recordings with planted occlusion dynamics.
//!
//! Each camera's occlusion at keyframe `t` is the sum of
//!
//! * periodic occluders: `a * (1 + cos(2π((t + 0.5)/p - n/N) + φ)) / 2`, a wave
//!   sweeping across the cameras with period `p`;
//! * a Markov occluder of amplitude `a` sitting on one camera, moving by a
//!   row-stochastic switching matrix;
//! * Gaussian jitter of standard deviation `noise`.
//!
//! The label is the least occluded camera (ties to the lowest index). Visual
//! and semantic features observe configurable mixtures of the periodic and
//! Markov components plus observation noise; the label jitter is never
//! observed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    class_id, extract_semantic, format_detections, fuse_frame, DetectionMap, FeatureDims, FeatureStore,
    SemanticConfig, SemanticDetection, VisualFeature,
};
use crate::dataset::{write_manifest, CameraId, FrameSet, ImageRef, SurgerySequence};
use crate::error::{Error, Result};
use crate::features::cache_features;
use crate::labels::{export_annotations, LabelRecord};

/// Annotator id of generated labels.
pub const SYNTHETIC_ANNOTATOR: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicOccluder {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovOccluder {
    pub amplitude: f64,
    /// Row-stochastic N×N matrix; entry `[i][j]` is P(next = j | current = i).
    pub switching: Vec<Vec<f64>>,
}

impl MarkovOccluder {
    /// Stays with probability `stay`, otherwise jumps uniformly to another camera.
    pub fn sticky(cameras: usize, amplitude: f64, stay: f64) -> Self {
        let off = if cameras > 1 { (1.0 - stay) / (cameras - 1) as f64 } else { 0.0 };
        let switching = (0..cameras)
            .map(|i| (0..cameras).map(|j| if i == j { if cameras > 1 { stay } else { 1.0 } } else { off }).collect())
            .collect();
        Self { amplitude, switching }
    }
}

/// How strongly one feature half observes each occlusion component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub periodic_gain: f64,
    pub markov_gain: f64,
    pub noise: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            periodic_gain: 1.0,
            markov_gain: 1.0,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub cameras: usize,
    pub length: usize,
    pub periodic: Vec<PeriodicOccluder>,
    pub markov: Option<MarkovOccluder>,
    /// Standard deviation of the unobserved per-camera occlusion jitter.
    pub noise: f64,
    pub visual: ObservationConfig,
    pub semantic: ObservationConfig,
    pub visual_dim: usize,
    /// Seeds the camera appearance vectors shared by every sequence.
    pub appearance_seed: u64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "synthetic".into(),
            cameras: 6,
            length: 600,
            periodic: vec![PeriodicOccluder {
                period: 12.0,
                amplitude: 1.0,
                phase: 0.0,
            }],
            markov: Some(MarkovOccluder::sticky(6, 0.8, 0.9)),
            noise: 0.05,
            visual: ObservationConfig::default(),
            semantic: ObservationConfig::default(),
            visual_dim: 32,
            appearance_seed: 0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras == 0 || self.length == 0 || self.visual_dim == 0 {
            return Err(Error::Config("scenario cameras, length and visual_dim must be positive".into()));
        }
        if self.id.is_empty() || self.id.contains(char::is_whitespace) {
            return Err(Error::Config(format!("scenario id `{}` must be a single token", self.id)));
        }
        if self.periodic.iter().any(|p| !(p.period > 0.0) || !p.amplitude.is_finite()) {
            return Err(Error::Config("periodic occluders need a positive period and finite amplitude".into()));
        }
        if !(self.noise >= 0.0) || !(self.visual.noise >= 0.0) || !(self.semantic.noise >= 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if let Some(m) = &self.markov {
            if m.switching.len() != self.cameras {
                return Err(Error::Config(format!(
                    "switching matrix has {} rows for {} cameras",
                    m.switching.len(),
                    self.cameras
                )));
            }
            for (i, row) in m.switching.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != self.cameras || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "switching matrix row {i} is not a probability distribution over {} cameras (sum {sum})",
                        self.cameras
                    )));
                }
            }
        }
        Ok(())
    }

    /// Occlusion of `camera` at `t` from the periodic occluders alone.
    pub fn periodic_occlusion(&self, t: usize, camera: usize) -> f64 {
        let n = self.cameras as f64;
        self.periodic
            .iter()
            .map(|p| {
                let angle = 2.0 * std::f64::consts::PI * ((t as f64 + 0.5) / p.period - camera as f64 / n) + p.phase;
                p.amplitude * 0.5 * (1.0 + angle.cos())
            })
            .sum()
    }
}

/// A generated sequence with its features and ground truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sequence: SurgerySequence,
    pub store: FeatureStore,
    pub detections: DetectionMap,
    /// Simulated occlusion, `[t][camera]`.
    pub occlusion: Vec<Vec<f64>>,
    /// Markov occluder position per keyframe, when present.
    pub markov_state: Vec<usize>,
}

impl SynthOutput {
    pub fn labels(&self) -> Vec<CameraId> {
        self.sequence.label_sequence().expect("generated sequences are labeled")
    }
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v < row[best] {
            best = i;
        }
    }
    best
}

fn side(x: f64) -> f64 {
    x.clamp(0.05, 0.95)
}

fn detections_for(obs: f64) -> Vec<SemanticDetection> {
    let box_at = |class: &str, cx: f64, cy: f64, s: f64| {
        let s = side(s);
        let clamp_c = |c: f64| c.clamp(s / 2.0, 1.0 - s / 2.0);
        SemanticDetection::new(class_id(class).expect("vocabulary class"), clamp_c(cx), clamp_c(cy), s, s, 0.9)
    };
    vec![
        box_at("wound", 0.5, 0.5, 0.6 - 0.25 * obs),
        box_at("thyroid tissue", 0.5, 0.55, 0.4 - 0.15 * obs),
        box_at("hand", 0.3 + 0.1 * obs, 0.4, 0.1 + 0.25 * obs),
    ]
}

/// Generates one sequence. Deterministic for a given config and seed.
pub fn synth_generate(scenario: &ScenarioConfig) -> Result<SynthOutput> {
    scenario.validate()?;
    let n = scenario.cameras;
    let t_len = scenario.length;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let jitter = Normal::new(0.0, scenario.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut appearance_rng = ChaCha8Rng::seed_from_u64(scenario.appearance_seed);
    let direction: Vec<f32> = (0..scenario.visual_dim)
        .map(|_| {
            let x: f64 = appearance_rng.sample(StandardNormal);
            x as f32
        })
        .collect();
    let offsets: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            (0..scenario.visual_dim)
                .map(|_| {
                    let x: f64 = appearance_rng.sample(StandardNormal);
                    0.3 * x as f32
                })
                .collect::<Vec<f32>>()
        })
        .collect();

    let mut markov_state = Vec::new();
    if let Some(m) = &scenario.markov {
        let mut s = rng.random_range(0..n);
        for _ in 0..t_len {
            markov_state.push(s);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = n - 1;
            for (j, p) in m.switching[s].iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            s = next;
        }
    }
    let markov_amp = scenario.markov.as_ref().map_or(0.0, |m| m.amplitude);

    let dims = FeatureDims::new(n, scenario.visual_dim);
    let sem_cfg = SemanticConfig::default();
    let mut occlusion = Vec::with_capacity(t_len);
    let mut rows = Vec::with_capacity(t_len);
    let mut detections = DetectionMap::new();
    let mut frame_sets = Vec::with_capacity(t_len);
    let mut labels = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let periodic: Vec<f64> = (0..n).map(|c| scenario.periodic_occlusion(t, c)).collect();
        let markov: Vec<f64> = (0..n)
            .map(|c| if markov_state.get(t) == Some(&c) { markov_amp } else { 0.0 })
            .collect();
        let occ: Vec<f64> = (0..n)
            .map(|c| {
                let j = if scenario.noise > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
                periodic[c] + markov[c] + j
            })
            .collect();

        let observe = |o: &ObservationConfig, c: usize, rng: &mut ChaCha8Rng| {
            let e: f64 = if o.noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            o.periodic_gain * periodic[c] + o.markov_gain * markov[c] + o.noise * e
        };
        let mut visual = Vec::with_capacity(n);
        let mut semantic = Vec::with_capacity(n);
        for (c, offset) in offsets.iter().enumerate() {
            let ov = observe(&scenario.visual, c, &mut rng);
            let vector = direction
                .iter()
                .zip(offset)
                .map(|(d, off)| (ov as f32) * d + off)
                .collect();
            visual.push(VisualFeature {
                camera: CameraId(c),
                vector,
            });
            let os = observe(&scenario.semantic, c, &mut rng);
            let dets = detections_for(os);
            semantic.push(extract_semantic(CameraId(c), &dets, &sem_cfg)?);
            detections.insert((t as u64, c), dets);
        }
        rows.push(fuse_frame(t, &visual, &semantic, &dims)?.vector);

        let label = argmin(&occ);
        labels.push(LabelRecord::new(t as u64, label, SYNTHETIC_ANNOTATOR, true));
        frame_sets.push(FrameSet {
            timestamp: t as u64,
            images: (0..n)
                .map(|c| ImageRef(format!("synthetic:{}/{t}/{c}", scenario.id)))
                .collect(),
        });
        occlusion.push(occ);
    }

    let mut sequence = SurgerySequence::new(scenario.id.clone(), n, frame_sets);
    sequence.labels = labels;
    sequence.synthetic = true;
    sequence.source_fps = 1.0;
    let mut meta = BTreeMap::new();
    meta.insert("label_rule".into(), "argmin-occlusion ties-lowest-index".into());
    meta.insert("seed".into(), scenario.seed.to_string());
    meta.insert(
        "scenario".into(),
        serde_json::to_string(scenario).map_err(|e| Error::Serde(e.to_string()))?,
    );
    sequence.metadata = meta;

    let store = FeatureStore {
        sequence_id: scenario.id.clone(),
        extractor_id: format!("synthetic-projection-{}", scenario.visual_dim),
        dims,
        rows,
    };
    Ok(SynthOutput {
        sequence,
        store,
        detections,
        occlusion,
        markov_state,
    })
}

/// Writes generated sequences as a dataset directory: a manifest plus a
/// labels file, feature store and detections file per sequence.
pub fn write_synthetic_dataset(dir: &Path, outputs: &mut [SynthOutput]) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for out in outputs.iter_mut() {
        let seq_dir = dir.join(&out.sequence.id);
        fs::create_dir_all(&seq_dir).map_err(|e| Error::io(format!("creating {}", seq_dir.display()), e))?;
        let labels = seq_dir.join("labels.csv");
        let features = seq_dir.join("features.bin");
        let detections = seq_dir.join("detections.csv");
        export_annotations(&out.sequence.labels, &labels)?;
        cache_features(&out.store, &features)?;
        fs::write(&detections, format_detections(&out.detections))
            .map_err(|e| Error::io(format!("writing {}", detections.display()), e))?;
        out.sequence.labels_path = Some(labels);
        out.sequence.features_path = Some(features);
        out.sequence.detections_path = Some(detections);
        out.sequence.base_dir = dir.to_path_buf();
    }
    let manifest = dir.join("manifest.txt");
    let seqs: Vec<SurgerySequence> = outputs.iter().map(|o| o.sequence.clone()).collect();
    write_manifest(&manifest, &seqs)?;
    Ok(manifest)
}
