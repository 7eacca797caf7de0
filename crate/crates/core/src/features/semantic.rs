use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SEMANTIC_DIM, SLOTS_PER_CLASS, VOCABULARY};
use crate::dataset::CameraId;
use crate::error::{Error, Result};

/// One detector output box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticDetection {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub area: f64,
    pub confidence: f64,
}

impl SemanticDetection {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self {
            class_id,
            cx,
            cy,
            w,
            h,
            area: w * h,
            confidence,
        }
    }

    fn check(&self) -> Result<()> {
        if self.class_id >= VOCABULARY.len() {
            return Err(Error::Vocabulary(self.class_id));
        }
        const TOL: f64 = 1e-9;
        let inside = self.w > 0.0
            && self.h > 0.0
            && self.w <= 1.0
            && self.h <= 1.0
            && self.cx - self.w / 2.0 >= -TOL
            && self.cx + self.w / 2.0 <= 1.0 + TOL
            && self.cy - self.h / 2.0 >= -TOL
            && self.cy + self.h / 2.0 <= 1.0 + TOL
            && (0.0..=1.0).contains(&self.confidence)
            && (self.area - self.w * self.h).abs() <= TOL;
        if inside {
            Ok(())
        } else {
            Err(Error::Domain(format!("detection box outside the unit square: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    /// Detections below this confidence are ignored.
    pub confidence_threshold: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticFeature {
    pub camera: CameraId,
    pub vector: Vec<f32>,
}

/// Aggregates a variable-length detection list into fixed per-class slots.
/// Classes without detections keep all-zero slots. The result does not
/// depend on the order of `detections`.
pub fn extract_semantic(
    camera: CameraId,
    detections: &[SemanticDetection],
    config: &SemanticConfig,
) -> Result<SemanticFeature> {
    let mut per_class: Vec<Vec<SemanticDetection>> = vec![Vec::new(); VOCABULARY.len()];
    for d in detections {
        d.check()?;
        if d.confidence >= config.confidence_threshold {
            per_class[d.class_id].push(*d);
        }
    }
    let mut vector = vec![0f32; SEMANTIC_DIM];
    for (class, dets) in per_class.iter_mut().enumerate() {
        if dets.is_empty() {
            continue;
        }
        // canonical order makes the floating-point sums order independent
        dets.sort_by(|a, b| {
            a.cx.total_cmp(&b.cx)
                .then(a.cy.total_cmp(&b.cy))
                .then(a.w.total_cmp(&b.w))
                .then(a.h.total_cmp(&b.h))
        });
        let n = dets.len() as f64;
        let sum = |f: fn(&SemanticDetection) -> f64| dets.iter().map(f).sum::<f64>();
        let slot = &mut vector[class * SLOTS_PER_CLASS..(class + 1) * SLOTS_PER_CLASS];
        slot[0] = n as f32;
        slot[1] = (sum(|d| d.cx) / n) as f32;
        slot[2] = (sum(|d| d.cy) / n) as f32;
        slot[3] = (sum(|d| d.w) / n) as f32;
        slot[4] = (sum(|d| d.h) / n) as f32;
        slot[5] = sum(|d| d.area) as f32;
    }
    Ok(SemanticFeature { camera, vector })
}

/// Detections keyed by (timestamp, camera).
pub type DetectionMap = BTreeMap<(u64, usize), Vec<SemanticDetection>>;

/// Detections file: one box per line,
/// `timestamp,camera,class_id,cx,cy,w,h,confidence`; `#` starts a comment.
pub fn parse_detections(text: &str, origin: &Path) -> Result<DetectionMap> {
    let mut map = DetectionMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let int = |k: usize, name: &str| -> Result<u64> {
            f[k].parse().map_err(|_| err(format!("field `{name}`: `{}` is not an unsigned integer", f[k])))
        };
        let real = |k: usize, name: &str| -> Result<f64> {
            f[k].parse().map_err(|_| err(format!("field `{name}`: `{}` is not a number", f[k])))
        };
        let det = SemanticDetection::new(
            int(2, "class_id")? as usize,
            real(3, "cx")?,
            real(4, "cy")?,
            real(5, "w")?,
            real(6, "h")?,
            real(7, "confidence")?,
        );
        map.entry((int(0, "timestamp")?, int(1, "camera")? as usize))
            .or_default()
            .push(det);
    }
    Ok(map)
}

pub fn load_detections(path: &Path) -> Result<DetectionMap> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading detections {}", path.display()), e))?;
    parse_detections(&text, path)
}

pub fn format_detections(map: &DetectionMap) -> String {
    let mut s = String::from("# timestamp,camera,class_id,cx,cy,w,h,confidence\n");
    for ((t, c), dets) in map {
        for d in dets {
            writeln!(s, "{t},{c},{},{},{},{},{},{}", d.class_id, d.cx, d.cy, d.w, d.h, d.confidence).unwrap();
        }
    }
    s
}
