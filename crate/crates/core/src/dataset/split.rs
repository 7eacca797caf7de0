use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SurgerySequence;
use crate::error::{Error, Result};

/// Train/validation/test split parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Frames per shuffled block. Defaults to one window length (12 + 6).
    pub block_len: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.1, 0.2],
            seed: 42,
            block_len: 18,
        }
    }
}

/// Disjoint, sorted frame-index partitions of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }

    pub fn all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Splits a labeled sequence. See [`make_split_for`].
pub fn make_split(sequence: &SurgerySequence, config: &SplitConfig) -> Result<SplitAssignment> {
    if !sequence.is_labeled() {
        return Err(Error::Config(format!(
            "sequence {} must be fully labeled before splitting",
            sequence.id
        )));
    }
    make_split_for(sequence.len(), config)
}

/// Splits `frames` frame indices into three partitions.
///
/// Frames are grouped into contiguous blocks of `block_len`, the blocks are
/// shuffled with the seed, and the shuffled frame order is cut at
/// `floor(r0 * T)` and `floor((r0 + r1) * T)`. Each partition therefore
/// deviates from its exact share by less than one frame and keeps the
/// temporal contiguity of whole blocks.
pub fn make_split_for(frames: usize, config: &SplitConfig) -> Result<SplitAssignment> {
    let [r0, r1, r2] = config.ratios;
    if config.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || ((r0 + r1 + r2) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be fractions summing to 1, got {:?}",
            config.ratios
        )));
    }
    if config.block_len == 0 {
        return Err(Error::Config("split block length must be positive".into()));
    }

    let mut blocks: Vec<(usize, usize)> = (0..frames)
        .step_by(config.block_len)
        .map(|start| (start, (start + config.block_len).min(frames)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    blocks.shuffle(&mut rng);
    let order: Vec<usize> = blocks.into_iter().flat_map(|(a, b)| a..b).collect();

    let total = frames as f64;
    // small epsilon so that e.g. 0.8 * 100 does not floor to 79
    let cut1 = ((r0 * total + 1e-9).floor() as usize).min(frames);
    let cut2 = (((r0 + r1) * total + 1e-9).floor() as usize).clamp(cut1, frames);

    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitAssignment {
        train: sorted(&order[..cut1]),
        validation: sorted(&order[cut1..cut2]),
        test: sorted(&order[cut2..]),
        seed: config.seed,
    })
}
