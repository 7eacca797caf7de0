//! Multi-camera sequence data model: manifests, keyframing, splits, windows
//! and chance-rate accounting.

mod manifest;
mod split;
mod window;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelRecord;

pub use manifest::{load_manifest, write_manifest, MANIFEST_HEADER};
pub use split::{make_split, make_split_for, SplitAssignment, SplitConfig};
pub use window::{build_windows, contiguous_runs, Window};

/// Camera count used when a manifest does not declare one.
pub const DEFAULT_CAMERAS: usize = 6;
/// Source frame rate recorded when a manifest does not declare one.
pub const DEFAULT_FPS: f64 = 30.0;

/// Index of one synchronized camera, in `[0, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub usize);

impl CameraId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cam{}", self.0)
    }
}

/// Opaque reference to one camera image. Payloads are only read on demand.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    /// Resolves the reference against a base directory. URIs with a scheme
    /// (`synthetic:...`, `file:...`) are returned without the base applied.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        if let Some(rest) = self.0.strip_prefix("file:") {
            return PathBuf::from(rest);
        }
        let p = Path::new(&self.0);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.0.starts_with("synthetic:")
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The N synchronized images of one keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    /// Seconds from sequence start, after keyframe selection.
    pub timestamp: u64,
    pub images: Vec<ImageRef>,
}

/// One surgery's synchronized keyframe timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgerySequence {
    pub id: String,
    pub cameras: usize,
    pub frame_sets: Vec<FrameSet>,
    /// Full label history; the resolved view is a projection.
    pub labels: Vec<LabelRecord>,
    pub source_fps: f64,
    pub synthetic: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Directory relative paths in the manifest are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub features_path: Option<PathBuf>,
    #[serde(default)]
    pub detections_path: Option<PathBuf>,
}

impl SurgerySequence {
    pub fn new(id: impl Into<String>, cameras: usize, frame_sets: Vec<FrameSet>) -> Self {
        Self {
            id: id.into(),
            cameras,
            frame_sets,
            labels: Vec::new(),
            source_fps: DEFAULT_FPS,
            synthetic: false,
            metadata: BTreeMap::new(),
            base_dir: PathBuf::new(),
            labels_path: None,
            features_path: None,
            detections_path: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frame_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_sets.is_empty()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.frame_sets.iter().map(|f| f.timestamp).collect()
    }

    /// Index of the frame set with the given timestamp.
    pub fn frame_index(&self, timestamp: u64) -> Option<usize> {
        self.frame_sets
            .binary_search_by_key(&timestamp, |f| f.timestamp)
            .ok()
    }

    /// Resolved camera per timestamp.
    pub fn resolved_labels(&self) -> BTreeMap<u64, CameraId> {
        self.labels
            .iter()
            .filter(|r| r.resolved)
            .map(|r| (r.timestamp, r.camera))
            .collect()
    }

    /// True when every frame set carries exactly one resolved label.
    pub fn is_labeled(&self) -> bool {
        let resolved = self.resolved_labels();
        resolved.len() == self.frame_sets.len()
            && self
                .frame_sets
                .iter()
                .all(|f| resolved.contains_key(&f.timestamp))
    }

    /// Resolved labels aligned 1:1 with `frame_sets`.
    pub fn label_sequence(&self) -> Result<Vec<CameraId>> {
        let resolved = self.resolved_labels();
        self.frame_sets
            .iter()
            .map(|f| {
                resolved.get(&f.timestamp).copied().ok_or_else(|| {
                    Error::Integrity(format!(
                        "sequence {}: no resolved label at t={}",
                        self.id, f.timestamp
                    ))
                })
            })
            .collect()
    }

    /// Checks the structural invariants: nonempty, strictly increasing
    /// timestamps, N images per frame set, labels referencing known frames
    /// with cameras in range and at most one resolved label per timestamp.
    pub fn validate(&self) -> Result<()> {
        if self.frame_sets.is_empty() {
            return Err(Error::Integrity(format!("sequence {} has no frame sets", self.id)));
        }
        if self.cameras == 0 {
            return Err(Error::Integrity(format!("sequence {} declares zero cameras", self.id)));
        }
        for pair in self.frame_sets.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Integrity(format!(
                    "sequence {}: timestamps not strictly increasing at t={}",
                    self.id, pair[1].timestamp
                )));
            }
        }
        for f in &self.frame_sets {
            if f.images.len() != self.cameras {
                let missing = f.images.len().min(self.cameras);
                return Err(Error::Integrity(format!(
                    "sequence {}: frame t={} has {} images for {} cameras (camera {} missing)",
                    self.id,
                    f.timestamp,
                    f.images.len(),
                    self.cameras,
                    missing
                )));
            }
        }
        let mut resolved_at: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
        for r in &self.labels {
            if r.camera.0 >= self.cameras {
                return Err(Error::Integrity(format!(
                    "sequence {}: label at t={} names camera {} of {}",
                    self.id, r.timestamp, r.camera.0, self.cameras
                )));
            }
            if self.frame_index(r.timestamp).is_none() {
                return Err(Error::Integrity(format!(
                    "sequence {}: label at t={} has no frame set",
                    self.id, r.timestamp
                )));
            }
            if r.resolved {
                resolved_at.entry(r.timestamp).or_default().push(&r.annotator);
            }
        }
        if let Some((t, who)) = resolved_at.into_iter().find(|(_, v)| v.len() > 1) {
            return Err(Error::Conflict {
                timestamp: t,
                annotators: who.into_iter().map(String::from).collect(),
            });
        }
        Ok(())
    }
}

/// Picks keyframes from sorted raw timestamps: the first timestamp is kept
/// and each following keyframe is the earliest timestamp at least
/// `interval` after the previous keyframe.
pub fn select_keyframes(raw_timestamps: &[f64], interval: f64) -> Result<Vec<f64>> {
    if !(interval > 0.0) {
        return Err(Error::Config(format!("keyframe interval must be positive, got {interval}")));
    }
    let mut out: Vec<f64> = Vec::new();
    for &t in raw_timestamps {
        match out.last() {
            Some(&last) if t - last < interval => {}
            _ => out.push(t),
        }
    }
    Ok(out)
}

/// Frequency of the most common label (the accuracy of a constant
/// majority-class predictor).
pub fn chance_rate(labels: &[CameraId]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Domain("chance rate of an empty label set".into()));
    }
    let mut counts: BTreeMap<CameraId, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    Ok(max as f64 / labels.len() as f64)
}

/// Per-camera label counts over `cameras` classes.
pub fn label_histogram(labels: &[CameraId], cameras: usize) -> Vec<usize> {
    let mut h = vec![0; cameras];
    for l in labels {
        if l.0 < cameras {
            h[l.0] += 1;
        }
    }
    h
}
