//! Per-camera visual and semantic features, their per-timestep fusion,
//! the on-disk feature store, normalization, and the synthetic occlusion
//! generator.

mod fuse;
mod normalize;
mod semantic;
mod store;
pub mod synth;
mod visual;

use serde::{Deserialize, Serialize};

use crate::dataset::{CameraId, SurgerySequence};
use crate::error::{Error, Result};

pub use fuse::{fuse_frame, FusedFrameFeature};
pub use normalize::Normalizer;
pub use semantic::{
    extract_semantic, format_detections, load_detections, parse_detections, DetectionMap, SemanticConfig,
    SemanticDetection, SemanticFeature,
};
pub use store::{cache_features, load_features, FeatureStore, STORE_MAGIC};
pub use visual::{extract_visual, MeanPixelExtractor, VisualExtractor, VisualFeature};

/// Detector vocabulary, indexed by class id.
pub const VOCABULARY: [&str; 23] = [
    "aspirator",
    "bistoury",
    "detector",
    "drainage tube",
    "electrotome",
    "gauze",
    "glue",
    "hand",
    "head",
    "hemostat",
    "injector",
    "nesis",
    "porteaiguille",
    "sterile patches",
    "thyroid retractor",
    "thyroid retractor back",
    "thyroid retractor front",
    "thyroid tissue",
    "tissue scissors",
    "towel forceps",
    "treatment bowl",
    "tweezer",
    "wound",
];

/// Per-class slots: count, mean cx, mean cy, mean w, mean h, total area.
pub const SLOTS_PER_CLASS: usize = 6;
pub const SEMANTIC_DIM: usize = VOCABULARY.len() * SLOTS_PER_CLASS;
pub const DEFAULT_VISUAL_DIM: usize = 512;

pub fn class_id(name: &str) -> Option<usize> {
    VOCABULARY.iter().position(|c| *c == name)
}

/// Layout of a fused vector: all cameras' visual vectors, then all
/// cameras' semantic vectors, in camera order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub cameras: usize,
    pub visual_dim: usize,
    pub semantic_dim: usize,
}

impl FeatureDims {
    pub fn new(cameras: usize, visual_dim: usize) -> Self {
        Self {
            cameras,
            visual_dim,
            semantic_dim: SEMANTIC_DIM,
        }
    }

    pub fn visual_len(&self) -> usize {
        self.cameras * self.visual_dim
    }

    pub fn semantic_len(&self) -> usize {
        self.cameras * self.semantic_dim
    }

    pub fn fused_len(&self) -> usize {
        self.visual_len() + self.semantic_len()
    }

    pub fn visual_range(&self, camera: CameraId) -> std::ops::Range<usize> {
        let start = camera.0 * self.visual_dim;
        start..start + self.visual_dim
    }

    pub fn semantic_range(&self, camera: CameraId) -> std::ops::Range<usize> {
        let start = self.visual_len() + camera.0 * self.semantic_dim;
        start..start + self.semantic_dim
    }
}

/// Which halves of the fused vector the model consumes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    Full,
    NoVisual,
    NoSemantic,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Full, FeatureMode::NoVisual, FeatureMode::NoSemantic];

    /// Kept column range of a fused vector. The halves are contiguous so
    /// one range suffices.
    pub fn columns(self, dims: &FeatureDims) -> std::ops::Range<usize> {
        match self {
            FeatureMode::Full => 0..dims.fused_len(),
            FeatureMode::NoVisual => dims.visual_len()..dims.fused_len(),
            FeatureMode::NoSemantic => 0..dims.visual_len(),
        }
    }

    pub fn width(self, dims: &FeatureDims) -> usize {
        self.columns(dims).len()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Full => "full",
            FeatureMode::NoVisual => "no_visual",
            FeatureMode::NoSemantic => "no_semantic",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature mode `{s}` (full, no_visual, no_semantic)")))
    }
}

/// Runs both extractors over every frame set of a sequence and fuses the
/// results. Frames without detections get all-zero semantic slots.
pub fn extract_sequence(
    sequence: &SurgerySequence,
    extractor: &dyn VisualExtractor,
    detections: &DetectionMap,
    semantic: &SemanticConfig,
) -> Result<FeatureStore> {
    let dims = FeatureDims::new(sequence.cameras, extractor.dim());
    let mut rows = Vec::with_capacity(sequence.len());
    for (t, fs) in sequence.frame_sets.iter().enumerate() {
        let mut visual = Vec::with_capacity(sequence.cameras);
        let mut sem = Vec::with_capacity(sequence.cameras);
        for (c, image) in fs.images.iter().enumerate() {
            if image.is_synthetic() {
                return Err(Error::Extraction {
                    reference: image.to_string(),
                    message: "synthetic references carry no pixels; use the generated feature store".into(),
                });
            }
            visual.push(extract_visual(image, &sequence.base_dir, CameraId(c), extractor)?);
            let dets = detections.get(&(fs.timestamp, c)).map(Vec::as_slice).unwrap_or(&[]);
            sem.push(extract_semantic(CameraId(c), dets, semantic)?);
        }
        rows.push(fuse_frame(t, &visual, &sem, &dims)?.vector);
    }
    Ok(FeatureStore {
        sequence_id: sequence.id.clone(),
        extractor_id: extractor.id(),
        dims,
        rows,
    })
}
