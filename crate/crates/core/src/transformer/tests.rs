use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::skeleton::JointId;
use crate::synth::{generate, ErrorType, MotionSpec, PhaseSelector, Template};

fn small() -> TransformerConfig {
    TransformerConfig {
        d_model: 8,
        n_heads: 2,
        spatial_layers: 1,
        temporal_layers: 1,
        seq_len: 6,
        mlp_hidden: 12,
        seed: 3,
        ..TransformerConfig::default()
    }
}

fn random_example(c: &TransformerConfig, seed: u64) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Example {
        input: (0..c.input_len())
            .map(|_| rng.random_range(-1.5..1.5))
            .collect(),
        target: Target {
            scores: [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ],
            labels: (0..c.seq_len)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
        },
    }
}

/// Parameters moved off their structured initial values (unit gains, zero
/// biases) so no derivative vanishes by symmetry.
fn jittered(c: TransformerConfig, seed: u64) -> TransformerModel {
    let mut m = TransformerModel::new(c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params.iter_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    m
}

#[test]
fn shapes_and_determinism() {
    let c = small();
    let m = TransformerModel::new(c.clone()).unwrap();
    let e = random_example(&c, 1);
    let a = m.forward(&e.input).unwrap();
    let b = m.forward(&e.input).unwrap();
    assert_eq!(a.mistake_logits.len(), c.seq_len);
    assert_eq!(a, b);
    assert!(a.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    assert!(a
        .mistake_probabilities()
        .iter()
        .all(|p| *p > 0.0 && *p < 1.0));
    assert_eq!(TransformerModel::new(c).unwrap(), m);
}

#[test]
fn attention_rows_are_distributions() {
    let c = small();
    let m = jittered(c.clone(), 2);
    let trace = m.trace(&random_example(&c, 2).input).unwrap();
    let weights = trace.attention_weights();
    assert_eq!(
        weights.len(),
        c.seq_len * c.spatial_layers * c.n_heads + c.temporal_layers * c.n_heads
    );
    for w in weights {
        let n = (w.len() as f64).sqrt() as usize;
        for row in w.chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn rejects_bad_input() {
    let c = small();
    let m = TransformerModel::new(c.clone()).unwrap();
    let mut e = random_example(&c, 0);
    e.input[5] = f64::NAN;
    assert!(matches!(
        m.forward(&e.input),
        Err(crate::Error::NonFinite(_))
    ));
    assert!(matches!(
        m.forward(&e.input[1..]),
        Err(crate::Error::Shape(_))
    ));
    let bad = TransformerConfig {
        d_model: 10,
        n_heads: 4,
        ..TransformerConfig::default()
    };
    assert!(TransformerModel::new(bad).is_err());
}

#[test]
fn loss_matches_scalar_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<f64> = (0..5)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let scores: [f64; 3] = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        let targets: [f64; 3] = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        let mut expected = 0.0f64;
        for k in 0..3 {
            expected += (scores[k] - targets[k]).powi(2) / 3.0;
        }
        for (z, y) in logits.iter().zip(&labels) {
            let p = 1.0 / (1.0 + (-z).exp());
            expected -= (y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / 5.0;
        }
        let got = loss(
            &Prediction {
                scores,
                mistake_logits: logits,
            },
            &Target {
                scores: targets,
                labels,
            },
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-12);
    }
}

#[test]
fn loss_extremes_and_shape() {
    let exact = Prediction {
        scores: [0.2, 0.5, 1.0],
        mistake_logits: vec![40.0, -40.0],
    };
    let t = Target {
        scores: [0.2, 0.5, 1.0],
        labels: vec![1.0, 0.0],
    };
    assert!(loss(&exact, &t).unwrap() < 1e-15);
    let wrong = Prediction {
        scores: [1.0, 0.0, 0.0],
        mistake_logits: vec![-500.0, 500.0],
    };
    let l = loss(&wrong, &t).unwrap();
    assert!(l.is_finite() && l > 400.0);
    let short = Target {
        scores: [0.0; 3],
        labels: vec![1.0],
    };
    assert!(matches!(loss(&exact, &short), Err(crate::Error::Shape(_))));
}

#[test]
fn gradient_matches_finite_differences() {
    let c = small();
    let m = jittered(c.clone(), 5);
    let e = random_example(&c, 5);
    let (_, grad) = m.loss_and_gradient(&e.input, &e.target).unwrap();
    let mut worst: f64 = 0.0;
    for t in m.layout().tensors() {
        for i in [
            t.range.start,
            (t.range.start + t.range.end) / 2,
            t.range.end - 1,
        ] {
            let n = numeric_gradient(&m, &e, i, 1e-5).unwrap();
            let err = relative_error(grad[i], n, 1e-7);
            assert!(
                err < 1e-4,
                "{} [{i}]: analytic {} numeric {n}",
                t.name,
                grad[i]
            );
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn zero_heads_block_upstream_gradient() {
    let c = small();
    let mut m = jittered(c.clone(), 6);
    for r in m.layout().head_weights() {
        m.params[r].fill(0.0);
    }
    let e = random_example(&c, 6);
    let (_, grad) = m.loss_and_gradient(&e.input, &e.target).unwrap();
    for t in m.layout().tensors() {
        let upstream = !t.name.starts_with("head.");
        if upstream {
            assert!(
                grad[t.range.clone()].iter().all(|&g| g == 0.0),
                "{}",
                t.name
            );
        }
    }
    let [score_w, _] = m.layout().head_weights();
    assert!(grad[score_w].iter().any(|&g| g != 0.0));
}

#[test]
fn duplicated_example_has_same_mean_gradient() {
    let c = small();
    let m = jittered(c.clone(), 7);
    let e = random_example(&c, 7);
    let (l1, g1) = batch_gradient(&m, &[&e]).unwrap();
    let (l2, g2) = batch_gradient(&m, &[&e, &e]).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn spatial_encoder_is_permutation_equivariant_without_positions() {
    let c = small();
    let mut m = jittered(c.clone(), 8);
    for r in m.layout().positional() {
        m.params[r].fill(0.0);
    }
    let e = random_example(&c, 8);
    let perm: Vec<usize> = (0..17).map(|j| (j * 5 + 3) % 17).collect();
    let mut permuted = e.input.clone();
    for f in 0..c.seq_len {
        for (dst, &src) in perm.iter().enumerate() {
            for k in 0..2 {
                permuted[(f * 17 + dst) * 2 + k] = e.input[(f * 17 + src) * 2 + k];
            }
        }
    }
    let a = m.trace(&e.input).unwrap();
    let b = m.trace(&permuted).unwrap();
    let d = c.d_model;
    for f in 0..c.seq_len {
        let (sa, sb) = (a.spatial_output(f), b.spatial_output(f));
        for (dst, &src) in perm.iter().enumerate() {
            for k in 0..d {
                assert!((sb[dst * d + k] - sa[src * d + k]).abs() < 1e-12);
            }
        }
    }
}

fn synthetic_set(n: usize, seq_len: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let mut spec = MotionSpec::new(Template::Squat, 20 + i % 7, 30.0);
            spec.noise_std = 0.5;
            if i % 2 == 1 {
                spec = spec.with_error(
                    JointId::LeftKnee,
                    ErrorType::AngleOffsetDeg,
                    30.0,
                    PhaseSelector::All,
                );
            }
            let (seq, ann) = generate(&spec, i as u64).unwrap();
            Example::from_annotated(&seq, &ann, seq_len).unwrap()
        })
        .collect()
}

#[test]
fn training_smoke() {
    let c = TransformerConfig {
        seq_len: 16,
        ..small()
    };
    let data = synthetic_set(8, c.seq_len);
    let mut m = TransformerModel::new(c.clone()).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        lr: 1e-2,
        batch_size: 8,
        seed: 1,
    };
    let curve = train(&mut m, &data, &cfg).unwrap();
    assert_eq!(curve.len(), 10);
    for w in curve[2..].windows(2) {
        assert!(w[1] <= 1.1 * w[0], "{curve:?}");
    }
    let mut again = TransformerModel::new(c.clone()).unwrap();
    assert_eq!(train(&mut again, &data, &cfg).unwrap(), curve);
    assert_eq!(again, m);

    let mut frozen = TransformerModel::new(c.clone()).unwrap();
    train(&mut frozen, &data, &TrainConfig { lr: 0.0, ..cfg }).unwrap();
    assert_eq!(frozen, TransformerModel::new(c).unwrap());
}

#[test]
fn divergence_is_reported() {
    let c = TransformerConfig {
        seq_len: 16,
        ..small()
    };
    let data = synthetic_set(2, c.seq_len);
    let mut m = TransformerModel::new(c).unwrap();
    let err = train(
        &mut m,
        &data,
        &TrainConfig {
            lr: 1e300,
            epochs: 3,
            ..TrainConfig::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::Divergence { .. }), "{err}");
}

#[test]
fn resampling_identity_and_labels() {
    let spec = MotionSpec::new(Template::Press, 10, 30.0);
    let (seq, _) = generate(&spec, 0).unwrap();
    let x = prepare_input(&seq, 10).unwrap();
    for (f, frame) in seq.frames().iter().enumerate() {
        let c = crate::normalization::normalize_global(frame).unwrap();
        for j in 0..17 {
            assert!((x[(f * 17 + j) * 2] - c.points[j].x).abs() < 1e-12);
            assert!((x[(f * 17 + j) * 2 + 1] - c.points[j].y).abs() < 1e-12);
        }
    }
    let labels: Vec<f64> = (0..10).map(|k| if k >= 5 { 1.0 } else { 0.0 }).collect();
    assert_eq!(resample_labels(&seq, &labels, 4), vec![0.0, 0.0, 1.0, 1.0]);
    let mid = prepare_input(&seq, 19).unwrap();
    let (a, b) = (&x[2 * 34..3 * 34], &x[3 * 34..4 * 34]);
    for k in 0..34 {
        assert!((mid[5 * 34 + k] - (a[k] + b[k]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip() {
    let c = small();
    let m = jittered(c, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&m, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), m);
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace(CHECKPOINT_FORMAT, "other");
    std::fs::write(&path, text).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn loss_csv() {
    assert_eq!(loss_curve_csv(&[0.5, 0.25]), "epoch,loss\n1,0.5\n2,0.25\n");
}
