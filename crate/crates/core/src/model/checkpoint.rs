//! JSON checkpoint: a versioned header, the architecture, named tensors,
//! the training step and the RNG position. Floats are written with
//! round-trip precision, so save then load is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params, TemporalModel};
use crate::error::{Error, Result};
use crate::features::{FeatureDims, FeatureMode, Normalizer};

pub const CHECKPOINT_FORMAT: &str = "camsel-checkpoint";
const VERSION: u32 = 1;

/// Enough to resume a ChaCha8 stream exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex
    pub seed: String,
    pub stream: u64,
    /// u128 word position, decimal (JSON numbers cannot hold it)
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Serde(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Serde("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Serde(format!("rng word_pos `{}` is not an integer", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TemporalModel,
    pub step: u64,
    pub rng: RngState,
    pub feature_mode: FeatureMode,
    pub feature_dims: Option<FeatureDims>,
    pub normalizer: Option<Normalizer>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    config: ModelConfig,
    step: u64,
    rng: RngState,
    feature_mode: FeatureMode,
    feature_dims: Option<FeatureDims>,
    normalizer: Option<Normalizer>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<Tensor>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let doc = Document {
        format: CHECKPOINT_FORMAT.into(),
        version: VERSION,
        config: ckpt.model.config.clone(),
        step: ckpt.step,
        rng: ckpt.rng.clone(),
        feature_mode: ckpt.feature_mode,
        feature_dims: ckpt.feature_dims,
        normalizer: ckpt.normalizer.clone(),
        metadata: ckpt.metadata.clone(),
        tensors: ckpt
            .model
            .params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| Tensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    if let Some(bad) = doc.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::Integrity(format!("tensor `{}` holds non-finite values", bad.name)));
    }
    let text = serde_json::to_string(&doc).map_err(|e| Error::Serde(e.to_string()))?;
    // write beside the target then rename, so a failure never leaves a torn file
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let doc: Document =
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    if doc.format != CHECKPOINT_FORMAT || doc.version != VERSION {
        return Err(Error::Integrity(format!(
            "{}: unsupported checkpoint `{} v{}`",
            path.display(),
            doc.format,
            doc.version
        )));
    }
    doc.config.validate()?;
    let named = doc
        .tensors
        .into_iter()
        .map(|t| (t.name, (t.shape, t.data)))
        .collect();
    let params = Params::from_tensors(&doc.config, named)?;
    Ok(Checkpoint {
        model: TemporalModel {
            config: doc.config,
            params,
        },
        step: doc.step,
        rng: doc.rng,
        feature_mode: doc.feature_mode,
        feature_dims: doc.feature_dims,
        normalizer: doc.normalizer,
        metadata: doc.metadata,
    })
}
