use serde::{Deserialize, Serialize};

use super::PreparedData;
use crate::dataset::{chance_rate, CameraId, Window};
use crate::error::{Error, Result};
use crate::model::TemporalModel;

/// Anything that labels the target span of a window.
pub trait WindowPredictor {
    fn predict_window(&self, window: &Window) -> Result<Vec<CameraId>>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a TemporalModel,
    pub data: &'a PreparedData,
}

impl WindowPredictor for ModelPredictor<'_> {
    fn predict_window(&self, window: &Window) -> Result<Vec<CameraId>> {
        self.model.predict(self.data.input(window))
    }
}

/// Reads the true labels. Useful as an upper reference.
pub struct OraclePredictor<'a>(pub &'a PreparedData);

impl WindowPredictor for OraclePredictor<'_> {
    fn predict_window(&self, window: &Window) -> Result<Vec<CameraId>> {
        Ok(self.0.target(window).to_vec())
    }
}

pub struct ConstantPredictor(pub CameraId);

impl WindowPredictor for ConstantPredictor {
    fn predict_window(&self, window: &Window) -> Result<Vec<CameraId>> {
        Ok(vec![self.0; window.horizon()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: usize,
    pub steps: usize,
    pub accuracy: f64,
    /// Majority-label frequency over the same evaluated steps.
    pub chance_rate: f64,
}

/// Per-step accuracy over every horizon step of every window.
pub fn evaluate(predictor: &dyn WindowPredictor, windows: &[Window], data: &PreparedData) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Protocol("empty test set".into()));
    }
    let mut correct = 0;
    let mut truth = Vec::with_capacity(windows.len() * windows[0].horizon());
    for w in windows {
        let y = data.target(w);
        let p = predictor.predict_window(w)?;
        if p.len() != y.len() {
            return Err(Error::shape("evaluate", y.len(), p.len()));
        }
        correct += p.iter().zip(y).filter(|(a, b)| a == b).count();
        truth.extend_from_slice(y);
    }
    let steps = truth.len();
    Ok(Evaluation {
        correct,
        steps,
        accuracy: correct as f64 / steps as f64,
        chance_rate: chance_rate(&truth)?,
    })
}
