use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SurgerySequence;

/// A lookback span paired with the horizon span that immediately follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub sequence_id: String,
    pub input_span: Range<usize>,
    pub target_span: Range<usize>,
}

impl Window {
    pub fn new(sequence_id: impl Into<String>, start: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            input_span: start..start + lookback,
            target_span: start + lookback..start + lookback + horizon,
        }
    }

    pub fn lookback(&self) -> usize {
        self.input_span.len()
    }

    pub fn horizon(&self) -> usize {
        self.target_span.len()
    }
}

/// Maximal runs of `indices` that are consecutive frame indices whose
/// timestamps are at most one second apart. `indices` must be sorted.
pub fn contiguous_runs(indices: &[usize], timestamps: &[u64]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let Some(&first) = indices.first() else {
        return runs;
    };
    let mut start = first;
    let mut prev = first;
    for &i in &indices[1..] {
        let joined = i == prev + 1 && timestamps[i].saturating_sub(timestamps[prev]) <= 1;
        if !joined {
            runs.push(start..prev + 1);
            start = i;
        }
        prev = i;
    }
    runs.push(start..prev + 1);
    runs
}

/// Windows over the contiguous runs of a partition. A run of length `M`
/// yields `floor((M - L - H) / stride) + 1` windows when `M >= L + H`, and
/// none otherwise. Windows never span a partition gap.
pub fn build_windows(
    sequence: &SurgerySequence,
    partition: &[usize],
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Vec<Window> {
    assert!(lookback >= 1 && horizon >= 1 && stride >= 1, "window parameters must be positive");
    let timestamps = sequence.timestamps();
    let mut sorted = partition.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let span = lookback + horizon;
    contiguous_runs(&sorted, &timestamps)
        .into_iter()
        .filter(|run| run.len() >= span)
        .flat_map(|run| {
            (run.start..=run.end - span)
                .step_by(stride)
                .map(|s| Window::new(sequence.id.clone(), s, lookback, horizon))
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FrameSet, ImageRef};

    fn seq(n: usize) -> SurgerySequence {
        SurgerySequence::new(
            "s",
            1,
            (0..n as u64)
                .map(|t| FrameSet {
                    timestamp: t,
                    images: vec![ImageRef(format!("{t}"))],
                })
                .collect(),
        )
    }

    #[test]
    fn single_run_counts() {
        let s = seq(30);
        let all: Vec<usize> = (0..30).collect();
        assert_eq!(build_windows(&s, &all, 12, 6, 1).len(), 13);
        assert_eq!(build_windows(&s, &all[..17], 12, 6, 1).len(), 0);
    }

    #[test]
    fn two_runs_with_stride() {
        let s = seq(60);
        let mut part: Vec<usize> = (0..20).collect();
        part.extend(30..55);
        let w = build_windows(&s, &part, 12, 6, 2);
        // run of 20: floor(2/2)+1 = 2; run of 25: floor(7/2)+1 = 4
        assert_eq!(w.len(), 6);
        for win in &w {
            assert_eq!(win.target_span.start, win.input_span.end);
            let inside = |i: usize| part.contains(&i);
            assert!(win.input_span.clone().chain(win.target_span.clone()).all(inside));
        }
    }

    #[test]
    fn timestamp_gap_breaks_run() {
        let mut s = seq(40);
        for f in s.frame_sets.iter_mut().skip(20) {
            f.timestamp += 5;
        }
        let all: Vec<usize> = (0..40).collect();
        // two runs of 20 frames each, one window per run
        assert_eq!(build_windows(&s, &all, 12, 6, 4).len(), 2);
    }
}
