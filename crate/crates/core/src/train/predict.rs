use ndarray::{s, Array2};

use crate::dataset::{contiguous_runs, CameraId, SurgerySequence};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, FeatureStore, Normalizer};
use crate::model::TemporalModel;

/// Forecasts for an unlabeled sequence. Within each contiguous run,
/// windows are tiled every `horizon` frames and a last window is aligned
/// to the end of the run, so every frame from the `lookback`-th onward gets
/// exactly one prediction (the earliest window covering it). Frames
/// without enough history stay `None`.
pub fn predict_sequence(
    model: &TemporalModel,
    mode: FeatureMode,
    normalizer: &Normalizer,
    sequence: &SurgerySequence,
    store: &FeatureStore,
) -> Result<Vec<Option<CameraId>>> {
    if store.len() != sequence.len() {
        return Err(Error::Integrity(format!(
            "sequence {}: {} frames but {} feature rows",
            sequence.id,
            sequence.len(),
            store.len()
        )));
    }
    let cols = mode.columns(&store.dims);
    if cols.len() != normalizer.width() || cols.len() != model.config.input_dim {
        return Err(Error::shape("predict", model.config.input_dim, cols.len()));
    }
    let mut x = Array2::zeros((store.len(), cols.len()));
    for (mut dst, row) in x.rows_mut().into_iter().zip(&store.rows) {
        let selected: Vec<f64> = row[cols.clone()].iter().map(|v| f64::from(*v)).collect();
        for (d, v) in dst.iter_mut().zip(normalizer.apply(&selected)) {
            *d = v;
        }
    }
    let (l, h) = (model.config.lookback, model.config.horizon);
    let mut out = vec![None; sequence.len()];
    let all: Vec<usize> = (0..sequence.len()).collect();
    for run in contiguous_runs(&all, &sequence.timestamps()) {
        if run.len() < l + h {
            continue;
        }
        let last = run.end - l - h;
        let mut starts: Vec<usize> = (run.start..=last).step_by(h).collect();
        if starts.last() != Some(&last) {
            starts.push(last);
        }
        for s in starts {
            let labels = model.predict(x.slice(s![s..s + l, ..]))?;
            for (t, c) in (s + l..s + l + h).zip(labels) {
                out[t].get_or_insert(c);
            }
        }
    }
    Ok(out)
}
