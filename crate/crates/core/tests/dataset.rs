mod common;

use std::collections::BTreeSet;

use camsel::dataset::{build_windows, contiguous_runs, load_manifest, make_split, write_manifest, CameraId, SplitConfig};
use camsel::labels::{export_annotations, LabelRecord};
use camsel::train::{baseline_area_dijkstra, path_cost};
use common::bare_sequence;
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn five_sequence_split_totals() {
    let dir = tempfile::tempdir().unwrap();
    let lengths = [5750usize, 5750, 5750, 5750, 5762];
    let mut seqs = Vec::new();
    for (i, &n) in lengths.iter().enumerate() {
        let mut s = bare_sequence(&format!("surgery{}", i + 1), n, 6);
        let records: Vec<LabelRecord> = (0..n).map(|t| LabelRecord::new(t as u64, (t / 7) % 6, "a1", true)).collect();
        let path = dir.path().join(format!("labels{}.csv", i + 1));
        export_annotations(&records, &path).unwrap();
        s.labels_path = Some(path);
        seqs.push(s);
    }
    let manifest = dir.path().join("manifest.txt");
    write_manifest(&manifest, &seqs).unwrap();
    let loaded = load_manifest(&manifest).unwrap();
    assert_eq!(loaded.len(), 5);
    let mut totals = [0usize; 3];
    for s in &loaded {
        let split = make_split(s, &SplitConfig::default()).unwrap();
        for (t, n) in totals.iter_mut().zip(split.sizes()) {
            *t += n;
        }
    }
    assert_eq!(totals.iter().sum::<usize>(), 28_762);
    for (got, want) in totals.iter().zip([20_134usize, 2_876, 5_752]) {
        assert!(got.abs_diff(want) <= 1, "{totals:?}");
    }
}

fn partition() -> impl Strategy<Value = (usize, Vec<bool>, usize, usize, usize)> {
    (0usize..80).prop_flat_map(|m| (Just(m), proptest::collection::vec(proptest::bool::weighted(0.8), m), 1usize..10, 1usize..7, 1usize..5))
}

proptest! {
    #[test]
    fn window_count_matches_closed_form_per_run((m, keep, l, h, stride) in partition()) {
        let seq = bare_sequence("p", m, 2);
        let frames: Vec<usize> = (0..m).filter(|&t| keep[t]).collect();
        let windows = build_windows(&seq, &frames, l, h, stride);
        let expected: usize = contiguous_runs(&frames, &seq.timestamps())
            .iter()
            .map(|r| if r.len() >= l + h { (r.len() - l - h) / stride + 1 } else { 0 })
            .sum();
        prop_assert_eq!(windows.len(), expected);
        let inside: BTreeSet<usize> = frames.iter().copied().collect();
        for w in &windows {
            prop_assert!(w.input_span.clone().chain(w.target_span.clone()).all(|t| inside.contains(&t)));
            prop_assert_eq!(w.input_span.end, w.target_span.start);
        }
    }

    #[test]
    fn dijkstra_matches_exhaustive_search(
        t in 1usize..=4,
        n in 1usize..=3,
        raw in proptest::collection::vec(-5.0f64..5.0, 12),
        lambda in prop_oneof![Just(0.0), 0.0f64..3.0, Just(100.0)],
    ) {
        let scores = Array2::from_shape_fn((t, n), |(i, j)| raw[i * 3 + j]);
        let path = baseline_area_dijkstra(scores.view(), lambda).unwrap();
        prop_assert_eq!(path.len(), t);
        let mut best = f64::INFINITY;
        for code in 0..n.pow(t as u32) {
            let p: Vec<CameraId> = (0..t).map(|i| CameraId(code / n.pow(i as u32) % n)).collect();
            best = best.min(path_cost(scores.view(), &p, lambda));
        }
        prop_assert_eq!(path_cost(scores.view(), &path, lambda), best);
    }
}
