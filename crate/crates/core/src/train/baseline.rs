use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, PreparedData, SequenceData, TrainConfig, WindowPredictor};
use crate::dataset::{contiguous_runs, CameraId, Window};
use crate::error::{Error, Result};
use crate::features::{class_id, DetectionMap, SemanticConfig};
use crate::model::{argmax_rows, softmax_rows, ClassWeights, PROB_FLOOR};

// ---- per-frame classifier ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerFrameConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PerFrameConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// One tanh hidden layer over a single fused frame vector, predicting that
/// frame's best camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PerFrameModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl PerFrameModel {
    pub fn init(input: usize, hidden: usize, cameras: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |shape: (usize, usize), fan: usize| {
            let b = 1.0 / (fan as f64).sqrt();
            Array2::from_shape_simple_fn(shape, || rng.random_range(-b..b))
        };
        let w1 = u((input, hidden), input);
        let b1 = u((1, hidden), input).remove_axis(Axis(0));
        let w2 = u((hidden, cameras), hidden);
        let b2 = u((1, cameras), hidden).remove_axis(Axis(0));
        Self { w1, b1, w2, b2 }
    }

    fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut u = x.dot(&self.w1);
        u += &self.b1;
        u.mapv_inplace(f64::tanh);
        u
    }

    pub fn probs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut logits = self.hidden(x).dot(&self.w2);
        logits += &self.b2;
        softmax_rows(logits.view())
    }

    pub fn predict_frame(&self, x: ArrayView1<f64>) -> CameraId {
        argmax_rows(self.probs(x.insert_axis(Axis(0))).view())[0]
    }

    /// Weighted cross-entropy of a batch and its gradients (w1, b1, w2, b2).
    fn loss_and_grads(&self, x: ArrayView2<f64>, y: &[CameraId], weights: &ClassWeights) -> (f64, [Vec<f64>; 4]) {
        let h = self.hidden(x);
        let mut logits = h.dot(&self.w2);
        logits += &self.b2;
        let p = softmax_rows(logits.view());
        let n = y.len() as f64;
        let mut d = p.clone();
        let mut loss = 0.0;
        for (i, c) in y.iter().enumerate() {
            let w = weights.0[c.0];
            let pt = p[[i, c.0]];
            loss -= w * pt.max(PROB_FLOOR).ln();
            let mut row = d.row_mut(i);
            if pt >= PROB_FLOOR {
                row[c.0] -= 1.0;
                row.mapv_inplace(|v| v * w / n);
            } else {
                row.fill(0.0);
            }
        }
        let gw2 = h.t().dot(&d);
        let gb2 = d.sum_axis(Axis(0));
        let dh = d.dot(&self.w2.t()) * h.mapv(|v| 1.0 - v * v);
        let gw1 = x.t().dot(&dh);
        let gb1 = dh.sum_axis(Axis(0));
        (loss / n, [gw1.into_raw_vec_and_offset().0, gb1.to_vec(), gw2.into_raw_vec_and_offset().0, gb2.to_vec()])
    }

    fn gather(data: &PreparedData, frames: &[(String, usize)]) -> (Array2<f64>, Vec<CameraId>) {
        let width = data.width();
        let mut x = Array2::zeros((frames.len(), width));
        let mut y = Vec::with_capacity(frames.len());
        for (mut row, (id, t)) in x.rows_mut().into_iter().zip(frames) {
            row.assign(&data.frame(id, *t));
            y.push(data.labels(id)[*t]);
        }
        (x, y)
    }

    fn eval_loss(&self, x: ArrayView2<f64>, y: &[CameraId], weights: &ClassWeights) -> f64 {
        let p = self.probs(x);
        let s: f64 = y.iter().enumerate().map(|(i, c)| -weights.0[c.0] * p[[i, c.0]].max(PROB_FLOOR).ln()).sum();
        s / y.len() as f64
    }

    /// Trains on labeled frames with Adam and early stopping on the
    /// validation frames; keeps the best-validation parameters.
    pub fn train(
        data: &PreparedData,
        train_frames: &[(String, usize)],
        val_frames: &[(String, usize)],
        cameras: usize,
        cfg: &PerFrameConfig,
        weights: &ClassWeights,
    ) -> Result<Self> {
        if train_frames.is_empty() || val_frames.is_empty() {
            return Err(Error::Config("per-frame baseline needs training and validation frames".into()));
        }
        if cfg.batch_size == 0 || cfg.hidden == 0 {
            return Err(Error::Config("per-frame batch_size and hidden must be positive".into()));
        }
        let (x, y) = Self::gather(data, train_frames);
        let (vx, vy) = Self::gather(data, val_frames);
        let mut model = Self::init(data.width(), cfg.hidden, cameras, cfg.seed);
        let mut adam = Adam::for_sizes(
            &[model.w1.len(), model.b1.len(), model.w2.len(), model.b2.len()],
            &TrainConfig::default(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..y.len()).collect();
        let mut best = (model.eval_loss(vx.view(), &vy, weights), model.clone());
        let mut wait = 0;
        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let bx = x.select(Axis(0), chunk);
                let by: Vec<CameraId> = chunk.iter().map(|&i| y[i]).collect();
                let (loss, g) = model.loss_and_grads(bx.view(), &by, weights);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, batch: b + 1 });
                }
                let params = vec![
                    model.w1.as_slice_mut().expect("standard layout"),
                    model.b1.as_slice_mut().expect("standard layout"),
                    model.w2.as_slice_mut().expect("standard layout"),
                    model.b2.as_slice_mut().expect("standard layout"),
                ];
                adam.update_tensors(params, g.iter().map(Vec::as_slice).collect(), cfg.lr);
            }
            let v = model.eval_loss(vx.view(), &vy, weights);
            if v < best.0 {
                best = (v, model.clone());
                wait = 0;
            } else {
                wait += 1;
                if wait >= cfg.patience {
                    break;
                }
            }
        }
        Ok(best.1)
    }

    pub fn predictor<'a>(&'a self, data: &'a PreparedData) -> PerFramePredictor<'a> {
        PerFramePredictor { model: self, data }
    }
}

/// Labels each target frame from that frame's own features.
pub struct PerFramePredictor<'a> {
    model: &'a PerFrameModel,
    data: &'a PreparedData,
}

impl WindowPredictor for PerFramePredictor<'_> {
    fn predict_window(&self, window: &Window) -> Result<Vec<CameraId>> {
        Ok(window
            .target_span
            .clone()
            .map(|t| self.model.predict_frame(self.data.frame(&window.sequence_id, t)))
            .collect())
    }
}

// ---- area scores and shortest path ----

/// Per-frame, per-camera visible surgical field: total area of confident
/// `wound` and `thyroid tissue` detections.
pub fn area_scores(detections: &DetectionMap, frames: Range<usize>, cameras: usize) -> Array2<f64> {
    let classes = [class_id("wound").expect("vocabulary"), class_id("thyroid tissue").expect("vocabulary")];
    let threshold = SemanticConfig::default().confidence_threshold;
    let mut out = Array2::zeros((frames.len(), cameras));
    for (i, t) in frames.enumerate() {
        for c in 0..cameras {
            out[[i, c]] = detections
                .get(&(t as u64, c))
                .map(|ds| {
                    ds.iter()
                        .filter(|d| classes.contains(&d.class_id) && d.confidence >= threshold)
                        .map(|d| d.area)
                        .sum()
                })
                .unwrap_or(0.0);
        }
    }
    out
}

/// `Σ_t -score[t, c_t] + λ · #switches`, summed in time order.
pub fn path_cost(scores: ArrayView2<f64>, path: &[CameraId], lambda: f64) -> f64 {
    let mut cost = 0.0;
    for (t, c) in path.iter().enumerate() {
        cost += -scores[[t, c.0]];
        if t > 0 && path[t - 1] != *c {
            cost += lambda;
        }
    }
    cost
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    t: usize,
    c: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (dist, t, c)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.t.cmp(&self.t))
            .then_with(|| other.c.cmp(&self.c))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Camera path maximizing total score minus `lambda` per switch, by
/// Dijkstra over the layered frame × camera graph. Scores are shifted by
/// their maximum so every edge is nonnegative; every path crosses each
/// layer once, so the shift does not change the optimum. Equal-cost
/// choices resolve toward lower camera indices.
pub fn baseline_area_dijkstra(scores: ArrayView2<f64>, lambda: f64) -> Result<Vec<CameraId>> {
    let (t_len, n) = scores.dim();
    if scores.iter().any(|v| !v.is_finite()) || !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain("scores must be finite and the switch penalty finite and nonnegative".into()));
    }
    if t_len == 0 || n == 0 {
        return Ok(Vec::new());
    }
    let top = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let cost = |t: usize, c: usize| top - scores[[t, c]];
    let mut dist = vec![f64::INFINITY; t_len * n];
    let mut pred = vec![usize::MAX; t_len * n];
    let mut done = vec![false; t_len * n];
    let mut heap = BinaryHeap::new();
    for (c, d) in dist.iter_mut().take(n).enumerate() {
        *d = cost(0, c);
        heap.push(Entry { dist: *d, t: 0, c });
    }
    let mut end = None;
    while let Some(Entry { dist: d, t, c }) = heap.pop() {
        let i = t * n + c;
        if done[i] {
            continue;
        }
        done[i] = true;
        if t + 1 == t_len {
            end = Some(c);
            break;
        }
        for c2 in 0..n {
            let j = (t + 1) * n + c2;
            let nd = d + cost(t + 1, c2) + if c2 == c { 0.0 } else { lambda };
            if nd < dist[j] {
                dist[j] = nd;
                pred[j] = c;
                heap.push(Entry { dist: nd, t: t + 1, c: c2 });
            }
        }
    }
    let mut c = end.expect("last layer is reachable");
    let mut path = vec![CameraId(0); t_len];
    for t in (0..t_len).rev() {
        path[t] = CameraId(c);
        if t > 0 {
            c = pred[t * n + c];
        }
    }
    Ok(path)
}

/// Area-path predictions for the partitions of each sequence: one shortest
/// path per contiguous run, read back at each window's target span.
pub struct AreaPathPredictor {
    paths: BTreeMap<String, BTreeMap<usize, CameraId>>,
}

impl AreaPathPredictor {
    pub fn new(data: &[SequenceData], partitions: &BTreeMap<String, Vec<usize>>, lambda: f64) -> Result<Self> {
        let mut paths = BTreeMap::new();
        for d in data {
            let Some(frames) = partitions.get(d.id()) else {
                continue;
            };
            let Some(dets) = &d.detections else {
                return Err(Error::Config(format!("sequence {} has no detections for the area baseline", d.id())));
            };
            let mut labels = BTreeMap::new();
            for span in contiguous_runs(frames, &d.sequence.timestamps()) {
                let scores = area_scores(dets, span.clone(), d.sequence.cameras);
                for (t, c) in span.zip(baseline_area_dijkstra(scores.view(), lambda)?) {
                    labels.insert(t, c);
                }
            }
            paths.insert(d.id().to_string(), labels);
        }
        Ok(Self { paths })
    }
}

impl WindowPredictor for AreaPathPredictor {
    fn predict_window(&self, window: &Window) -> Result<Vec<CameraId>> {
        let path = self
            .paths
            .get(&window.sequence_id)
            .ok_or_else(|| Error::Protocol(format!("no area path for sequence {}", window.sequence_id)))?;
        window
            .target_span
            .clone()
            .map(|t| {
                path.get(&t)
                    .copied()
                    .ok_or_else(|| Error::Protocol(format!("frame {t} of {} outside the scored partition", window.sequence_id)))
            })
            .collect()
    }
}
