mod common;

use std::collections::BTreeSet;

use longtail_lab::losses::{self, AdjustingTerm, LossKind, LossSpec};
use longtail_lab::model::{CosineClassifier, ModelDims};
use longtail_lab::{generate, partition_by_count, report, train, ConfuserPair, LongTailSpec, Spread, TrainConfig};
use proptest::prelude::*;

use common::*;

fn logits_and_target() -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(-1.0f64..=1.0, 2..10).prop_flat_map(|l| {
        let c = l.len();
        (Just(l), 0..c)
    })
}

fn counts_for(c: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..2000, c)
}

proptest! {
    #[test]
    fn every_kind_matches_oracle_and_finite_differences(
        (logits, y) in logits_and_target(),
        seed in any::<u64>(),
        s in 1.0f64..40.0,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let counts = random_counts(&mut rng, logits.len());
        let c = logits.len();
        for kind in LossKind::ALL {
            let prepared = LossSpec::new(kind).with_scale(s).prepare(&counts).unwrap();
            let out = prepared.evaluate(&logits, y).unwrap();
            let want = if kind == LossKind::Focal {
                oracle_focal(&logits, y, s, losses::DEFAULT_FOCAL_GAMMA)
            } else {
                let mut a = vec![0.0; c];
                a[y] = out.adjust;
                oracle_la(&logits, y, &a, true, s)
            };
            prop_assert!(close(out.value.loss, want, 1e-10), "{kind}: {} vs {want}", out.value.loss);
            prop_assert!(out.value.loss >= 0.0);
            prop_assert!(out.adjust >= 0.0);
            let numeric = if kind == LossKind::Focal {
                central_diff(|l| losses::focal_loss(l, y, s, losses::DEFAULT_FOCAL_GAMMA).unwrap().loss, &logits, 1e-5)
            } else {
                let frozen = AdjustingTerm::target(c, y, out.adjust);
                central_diff(|l| losses::la_loss(l, y, &frozen, s).unwrap().loss, &logits, 1e-5)
            };
            let err = rel_err(&out.value.grad, &numeric);
            // Tiny gradients hit finite-difference round-off rather than a model error.
            let mag = out.value.grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-6 || mag < 1e-8, "{kind}: rel err {err}");
        }
    }

    #[test]
    fn ala_equals_composed_la((logits, y) in logits_and_target(), s in 0.5f64..40.0, seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let counts = random_counts(&mut rng, logits.len());
        let qf = losses::quantity_factor(&counts).unwrap();
        let a = losses::ala_adjust(logits[y], qf[y]).unwrap();
        let composed = losses::la_loss(&logits, y, &AdjustingTerm::target(logits.len(), y, a), s).unwrap();
        let direct = losses::ala_loss(&logits, y, &counts, s).unwrap();
        prop_assert_eq!(&composed, &direct);
        prop_assert!(close(direct.loss, oracle_ala(&logits, y, &counts, s), 1e-10));
    }

    #[test]
    fn difficulty_factor_strictly_decreasing(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
        prop_assume!(a < b);
        let (da, db) = (losses::difficulty_factor(a).unwrap(), losses::difficulty_factor(b).unwrap());
        prop_assert!(da > db);
        prop_assert!((0.0..=1.0).contains(&da) && (0.0..=1.0).contains(&db));
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive(counts in prop::collection::vec(1usize..500, 1..40), few in 1usize..50, gap in 1usize..200) {
        let t = longtail_lab::ShotThresholds { many: few + gap, few };
        let p = partition_by_count(&counts, t);
        let union: BTreeSet<usize> = p.many.iter().chain(&p.medium).chain(&p.few).copied().collect();
        prop_assert_eq!(union.len(), p.many.len() + p.medium.len() + p.few.len());
        prop_assert_eq!(union, (0..counts.len()).collect::<BTreeSet<_>>());
    }

    #[test]
    fn metrics_recompose(samples in prop::collection::vec((0usize..6, 0usize..6, 0.0f64..=1.0), 1..80), counts in counts_for(6)) {
        let labels: Vec<usize> = samples.iter().map(|s| s.0).collect();
        let preds: Vec<usize> = samples.iter().map(|s| s.1).collect();
        let probs: Vec<f64> = samples.iter().map(|s| s.2).collect();
        let partition = partition_by_count(&counts, Default::default());
        let r = report(&preds, &probs, &labels, &partition, 6).unwrap();

        let correct = labels.iter().zip(&preds).filter(|(l, p)| l == p).count();
        prop_assert_eq!(r.all.correct, correct);
        prop_assert_eq!(r.many.correct + r.medium.correct + r.few.correct, correct);
        prop_assert_eq!(r.all.accuracy, Some(correct as f64 / labels.len() as f64));

        let mut weighted = 0.0;
        for (c, acc) in r.per_class_accuracy.iter().enumerate() {
            let n = labels.iter().filter(|&&l| l == c).count();
            if let Some(a) = acc {
                weighted += a * n as f64;
            }
        }
        prop_assert!((weighted / labels.len() as f64 - r.all.accuracy.unwrap()).abs() < 1e-12);

        for sub in [&r.many, &r.medium, &r.few, &r.all] {
            prop_assert!(sub.hard_count + sub.easy_count <= sub.total);
            prop_assert!(sub.probability_curve.windows(2).all(|w| w[0] >= w[1]));
            if let Some(a) = sub.accuracy {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}

#[test]
fn quantity_factor_dominates_ldam_at_the_tail() {
    let counts = [1280, 640, 100, 20, 5];
    let qf = losses::quantity_factor(&counts).unwrap();
    // Calibrate LDAM so both terms coincide at the head class.
    let unit = losses::ldam_adjust(&counts, 1.0).unwrap();
    let ldam: Vec<f64> = unit.iter().map(|v| v * qf[0] / unit[0]).collect();
    assert!((ldam[0] - qf[0]).abs() < 1e-12);
    assert!(qf[4] >= ldam[4], "qf {} < ldam {}", qf[4], ldam[4]);
}

#[test]
fn ldam_golden_and_la_hand_example() {
    let a = losses::ldam_adjust(&[16, 1], 0.5).unwrap();
    assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.5).abs() < 1e-15);
    let term = AdjustingTerm::target(2, 0, 3f64.ln());
    let v = losses::la_loss(&[0.0, 0.0], 0, &term, 1.0).unwrap();
    assert!((v.loss - 4f64.ln()).abs() < 1e-12);
}

fn small_spec() -> LongTailSpec {
    LongTailSpec {
        num_classes: 6,
        n_max: 120,
        n_min: 6,
        feature_dim: 8,
        intra_class_sigma: Spread::Uniform(0.3),
        confuser_pairs: vec![ConfuserPair { a: 0, b: 1, angle: 0.6 }],
        test_per_class: 10,
        seed: 11,
    }
}

#[test]
fn ala_trace_invariants() {
    let (train_set, _) = generate(&small_spec()).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        loss: LossSpec::new(LossKind::Ala),
        ..TrainConfig::default()
    };
    let model = CosineClassifier::init(ModelDims::linear(8, 6), 3).unwrap();
    let (_, trace) = train(&train_set, model, &cfg).unwrap();
    assert_eq!(trace.epochs.len(), cfg.epochs);
    for e in &trace.epochs {
        assert!(e.adjust.iter().flatten().all(|&v| v >= 0.0));
        assert!((0.0..=1.0).contains(&e.difficulty_all));
    }
    let first = &trace.epochs[0];
    assert!(first.adjust[2].unwrap() >= first.adjust[0].unwrap());
}

#[test]
fn dataset_row_counts() {
    let spec = small_spec();
    let (train_set, test_set) = generate(&spec).unwrap();
    assert_eq!(train_set.counts.iter().sum::<usize>(), train_set.labels.len());
    assert_eq!(test_set.labels.len(), spec.num_classes * spec.test_per_class);
}
