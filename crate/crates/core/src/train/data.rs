use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView1, ArrayView2};

use crate::dataset::{CameraId, SurgerySequence, Window};
use crate::error::{Error, Result};
use crate::features::synth::SynthOutput;
use crate::features::{load_detections, load_features, DetectionMap, FeatureDims, FeatureMode, FeatureStore, Normalizer};

/// A fully labeled sequence with its fused feature matrix.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub sequence: SurgerySequence,
    pub dims: FeatureDims,
    /// T × fused width
    pub features: Array2<f64>,
    pub labels: Vec<CameraId>,
    pub detections: Option<DetectionMap>,
}

impl SequenceData {
    pub fn new(sequence: SurgerySequence, store: &FeatureStore, detections: Option<DetectionMap>) -> Result<Self> {
        if store.len() != sequence.len() {
            return Err(Error::Integrity(format!(
                "sequence {}: {} frames but {} feature rows",
                sequence.id,
                sequence.len(),
                store.len()
            )));
        }
        if store.dims.cameras != sequence.cameras {
            return Err(Error::Integrity(format!(
                "sequence {}: {} cameras but features for {}",
                sequence.id, sequence.cameras, store.dims.cameras
            )));
        }
        let labels = sequence.label_sequence()?;
        let width = store.dims.fused_len();
        let mut features = Array2::zeros((store.len(), width));
        for (mut dst, row) in features.rows_mut().into_iter().zip(&store.rows) {
            for (d, v) in dst.iter_mut().zip(row) {
                *d = f64::from(*v);
            }
        }
        Ok(Self {
            sequence,
            dims: store.dims,
            features,
            labels,
            detections,
        })
    }

    pub fn from_synth(out: &SynthOutput) -> Result<Self> {
        Self::new(out.sequence.clone(), &out.store, Some(out.detections.clone()))
    }

    /// Reads the feature store (and detections, if listed) a manifest
    /// entry points at.
    pub fn load(sequence: SurgerySequence) -> Result<Self> {
        let Some(path) = sequence.features_path.clone() else {
            return Err(Error::Config(format!(
                "sequence {} has no feature store; run extract first",
                sequence.id
            )));
        };
        let store = load_features(&path, None)?;
        let detections = sequence.detections_path.as_deref().map(load_detections).transpose()?;
        Self::new(sequence, &store, detections)
    }

    pub fn id(&self) -> &str {
        &self.sequence.id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Model-ready inputs: the selected feature columns of every sequence,
/// normalized with statistics fitted on training frames only.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub mode: FeatureMode,
    pub normalizer: Normalizer,
    inputs: BTreeMap<String, Array2<f64>>,
    labels: BTreeMap<String, Vec<CameraId>>,
}

impl PreparedData {
    /// `fit_frames` lists, per sequence id, the frame indices whose
    /// statistics define the normalizer. With `normalize` off the
    /// normalizer is the identity.
    pub fn new(
        data: &[SequenceData],
        mode: FeatureMode,
        fit_frames: &BTreeMap<String, Vec<usize>>,
        normalize: bool,
    ) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::Config("no sequences".into()));
        };
        if let Some(d) = data.iter().find(|d| d.dims != first.dims) {
            return Err(Error::Integrity(format!(
                "sequence {} has feature dims {:?}, expected {:?}",
                d.id(),
                d.dims,
                first.dims
            )));
        }
        let cols = mode.columns(&first.dims);
        let selected: BTreeMap<String, Array2<f64>> = data
            .iter()
            .map(|d| (d.id().to_string(), d.features.slice(s![.., cols.clone()]).to_owned()))
            .collect();
        let width = cols.len();
        let normalizer = if normalize {
            let rows = fit_frames.iter().flat_map(|(id, frames)| {
                let m = &selected[id];
                frames.iter().map(move |&t| m.row(t).to_slice().expect("standard layout"))
            });
            Normalizer::fit(rows, width)
        } else {
            Normalizer::identity(width)
        };
        Ok(Self::with_normalizer(data, mode, normalizer, selected))
    }

    /// Applies an existing normalizer, e.g. one restored from a checkpoint.
    pub fn from_normalizer(data: &[SequenceData], mode: FeatureMode, normalizer: Normalizer) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::Config("no sequences".into()));
        };
        let cols = mode.columns(&first.dims);
        if cols.len() != normalizer.width() {
            return Err(Error::shape("normalize", normalizer.width(), cols.len()));
        }
        let selected = data
            .iter()
            .map(|d| {
                if d.dims != first.dims {
                    return Err(Error::Integrity(format!("sequence {} feature dims differ", d.id())));
                }
                Ok((d.id().to_string(), d.features.slice(s![.., cols.clone()]).to_owned()))
            })
            .collect::<Result<_>>()?;
        Ok(Self::with_normalizer(data, mode, normalizer, selected))
    }

    fn with_normalizer(
        data: &[SequenceData],
        mode: FeatureMode,
        normalizer: Normalizer,
        mut inputs: BTreeMap<String, Array2<f64>>,
    ) -> Self {
        for m in inputs.values_mut() {
            for mut row in m.rows_mut() {
                for ((v, mu), sd) in row.iter_mut().zip(&normalizer.mean).zip(&normalizer.std) {
                    *v = (*v - mu) / sd;
                }
            }
        }
        let labels = data.iter().map(|d| (d.id().to_string(), d.labels.clone())).collect();
        Self {
            mode,
            normalizer,
            inputs,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.normalizer.width()
    }

    pub fn sequence_ids(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(String::as_str)
    }

    /// L × width input block of a window.
    pub fn input(&self, w: &Window) -> ArrayView2<'_, f64> {
        self.inputs[&w.sequence_id].slice(s![w.input_span.clone(), ..])
    }

    pub fn frame(&self, sequence_id: &str, t: usize) -> ArrayView1<'_, f64> {
        self.inputs[sequence_id].row(t)
    }

    pub fn target(&self, w: &Window) -> &[CameraId] {
        &self.labels[&w.sequence_id][w.target_span.clone()]
    }

    pub fn labels(&self, sequence_id: &str) -> &[CameraId] {
        &self.labels[sequence_id]
    }
}
