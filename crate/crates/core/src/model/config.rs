use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation between the two stacked convolutions of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerActivation {
    /// tanh approximation of GELU
    Gelu,
    Identity,
}

impl InnerActivation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            InnerActivation::Identity => x,
            InnerActivation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }

    pub(crate) fn derivative(self, x: f64) -> f64 {
        match self {
            InnerActivation::Identity => 1.0,
            InnerActivation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                let u = k * (x + 0.044715 * x * x * x);
                let th = u.tanh();
                let du = k * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
        }
    }
}

/// Architecture hyperparameters. `input_dim` is the fused feature width
/// after any ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub num_blocks: usize,
    pub top_k: usize,
    pub dropout: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub cameras: usize,
    pub conv_channels: usize,
    /// Odd square kernel sizes averaged in each inception-style convolution.
    pub kernel_sizes: Vec<usize>,
    pub inner_activation: InnerActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 3900,
            d_model: 128,
            num_blocks: 2,
            top_k: 3,
            dropout: 0.3,
            lookback: 12,
            horizon: 6,
            cameras: 6,
            conv_channels: 32,
            kernel_sizes: vec![1, 3],
            inner_activation: InnerActivation::Gelu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("d_model", self.d_model),
            ("top_k", self.top_k),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("cameras", self.cameras),
            ("conv_channels", self.conv_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if self.top_k > self.lookback / 2 {
            return Err(Error::Config(format!(
                "top_k {} exceeds lookback/2 = {}",
                self.top_k,
                self.lookback / 2
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("kernel_sizes must be a nonempty list of odd sizes".into()));
        }
        Ok(())
    }
}
