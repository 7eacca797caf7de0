mod common;

use approx::assert_abs_diff_eq;
use camsel::features::FeatureMode;
use camsel::model::{
    detect_periods, forward, load_checkpoint, predict_labels, save_checkpoint, softmax_rows, times_block_forward, Checkpoint, ClassWeights, InnerActivation,
    ModelConfig, Mode, Params, ProbSequence, RngState, TemporalModel,
};
use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_finite_differences() {
    let weights = ClassWeights(vec![1.2, 0.3, 1.5]);
    for lookback in [4, 5] {
        let cfg = tiny_config(lookback);
        let model = TemporalModel::new(cfg.clone(), 3).unwrap();
        let r = grad_check(&model, &random_batch(&cfg, 2, 9), &weights, None);
        assert!(r.max_rel_err < 1e-4, "L={lookback}: {} at {}", r.max_rel_err, r.worst);
    }
}

#[test]
fn gradients_hold_under_a_fixed_dropout_mask() {
    let cfg = ModelConfig {
        dropout: 0.5,
        num_blocks: 2,
        ..tiny_config(6)
    };
    let model = TemporalModel::new(cfg.clone(), 4).unwrap();
    let r = grad_check(&model, &random_batch(&cfg, 2, 10), &ClassWeights::uniform(3), Some(99));
    assert!(r.max_rel_err < 1e-4, "{} at {}", r.max_rel_err, r.worst);
}

#[test]
fn identity_activation_gradients() {
    let cfg = ModelConfig {
        inner_activation: InnerActivation::Identity,
        kernel_sizes: vec![1, 3, 5],
        ..tiny_config(8)
    };
    let model = TemporalModel::new(cfg.clone(), 5).unwrap();
    let r = grad_check(&model, &random_batch(&cfg, 1, 11), &ClassWeights::uniform(3), None);
    assert!(r.max_rel_err < 1e-4, "{} at {}", r.max_rel_err, r.worst);
}

#[test]
fn eval_forward_is_deterministic_and_dropout_is_not() {
    let cfg = ModelConfig {
        dropout: 0.5,
        ..tiny_config(8)
    };
    let model = TemporalModel::new(cfg.clone(), 1).unwrap();
    let (x, _) = &random_batch(&cfg, 1, 2)[0];
    assert_eq!(model.forward(x.view(), Mode::Eval).unwrap(), model.forward(x.view(), Mode::Eval).unwrap());
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(2);
    let pa = model.forward(x.view(), Mode::Train(&mut a)).unwrap();
    let pb = model.forward(x.view(), Mode::Train(&mut b)).unwrap();
    assert_ne!(pa, pb);
}

#[test]
fn wrong_input_width_is_a_shape_error() {
    let cfg = tiny_config(4);
    let model = TemporalModel::new(cfg, 0).unwrap();
    let err = model.forward(Array2::zeros((4, 7)).view(), Mode::Eval).unwrap_err();
    assert!(err.to_string().contains("embed"), "{err}");
}

#[test]
fn checkpoint_file_round_trip() {
    let cfg = tiny_config(6);
    let model = TemporalModel::new(cfg.clone(), 8).unwrap();
    let rng = ChaCha8Rng::seed_from_u64(5);
    let ckpt = Checkpoint {
        model: model.clone(),
        step: 17,
        rng: RngState::capture(&rng),
        feature_mode: FeatureMode::NoVisual,
        feature_dims: None,
        normalizer: None,
        metadata: [("note".to_string(), "round trip".to_string())].into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model, model);
    assert_eq!(back.step, 17);
    assert_eq!(back.feature_mode, FeatureMode::NoVisual);
    let (x, _) = &random_batch(&cfg, 1, 3)[0];
    assert_eq!(back.model.forward(x.view(), Mode::Eval).unwrap(), model.forward(x.view(), Mode::Eval).unwrap());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let model = TemporalModel::new(tiny_config(4), 8).unwrap();
    let rng = ChaCha8Rng::seed_from_u64(0);
    let ckpt = Checkpoint {
        model,
        step: 0,
        rng: RngState::capture(&rng),
        feature_mode: FeatureMode::Full,
        feature_dims: None,
        normalizer: None,
        metadata: Default::default(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

fn block_case() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..24, 1usize..6, any::<u64>()).prop_flat_map(|(l, d, seed)| (Just(l), Just(d), 1..=l / 2, Just(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn times_block_preserves_shape((l, d, k, seed) in block_case()) {
        let cfg = ModelConfig {
            input_dim: 3,
            d_model: d,
            top_k: k,
            lookback: l,
            conv_channels: 2,
            ..tiny_config(l)
        };
        let params = Params::init(&cfg, seed).unwrap();
        let x = &random_batch(&ModelConfig { input_dim: d, ..cfg.clone() }, 1, seed)[0].0;
        let y = times_block_forward(x.view(), &params.blocks[0], &cfg).unwrap();
        prop_assert_eq!(y.dim(), (l, d));
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_rows_are_distributions((l, d, k, seed) in block_case()) {
        let cfg = ModelConfig { d_model: d, top_k: k, ..tiny_config(l) };
        let params = Params::init(&cfg, seed).unwrap();
        let x = &random_batch(&cfg, 1, seed ^ 1)[0].0;
        let p = forward(x.view(), &params, &cfg, Mode::Eval).unwrap();
        prop_assert_eq!(p.0.dim(), (cfg.horizon, cfg.cameras));
        for row in p.0.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn shifting_logits_keeps_probabilities_and_argmax(
        logits in proptest::collection::vec(-50.0f64..50.0, 12),
        shift in -1e3f64..1e3,
    ) {
        let z = Array2::from_shape_vec((2, 6), logits).unwrap();
        let p = softmax_rows(z.view());
        let q = softmax_rows((&z + shift).view());
        for (a, b) in p.iter().zip(q.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert_eq!(predict_labels(&ProbSequence(p.clone())), predict_labels(&ProbSequence(q)));
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn periods_ignore_channel_offsets(
        values in proptest::collection::vec(-3.0f64..3.0, 24),
        offsets in proptest::collection::vec(-100.0f64..100.0, 2),
    ) {
        let x = Array2::from_shape_vec((12, 2), values).unwrap();
        let mut shifted = x.clone();
        for (mut col, o) in shifted.columns_mut().into_iter().zip(&offsets) {
            col += *o;
        }
        let a = detect_periods(x.view(), 3).unwrap();
        let b = detect_periods(shifted.view(), 3).unwrap();
        prop_assert_eq!(a.periods(), b.periods());
        for (u, v) in a.amplitudes().iter().zip(b.amplitudes()) {
            prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
        }
    }
}
