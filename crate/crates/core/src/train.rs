//! Mini-batch SGD over a [`CosineClassifier`], with per-epoch adjusting-term traces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_by_count, Dataset, ShotThresholds, Subset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::LossSpec;
use crate::model::{CosineClassifier, Gradients};

fn default_decay_factor() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub loss: LossSpec,
    pub seed: u64,
    /// Epochs at whose start the learning rate is multiplied by `lr_decay_factor`.
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub thresholds: ShotThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            loss: LossSpec::default(),
            seed: 0,
            lr_decay_epochs: vec![20, 25],
            lr_decay_factor: default_decay_factor(),
            thresholds: ShotThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return bad(format!(
                "batch_size must be in 1..={train_len}, got {}",
                self.batch_size
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("lr_decay_factor must be positive, got {}", self.lr_decay_factor));
        }
        self.loss.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

/// One epoch of the trace. Subset arrays are indexed many, medium, few; an empty
/// subset has `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub adjust: [Option<f64>; 3],
    pub difficulty: [Option<f64>; 3],
    pub difficulty_all: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub epochs: Vec<EpochTrace>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TraceLog {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `epoch,loss,acc,adj_many,adj_medium,adj_few`, preceded by a provenance comment.
    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut out = format!("# {header_comment}\nepoch,loss,acc,adj_many,adj_medium,adj_few\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.loss,
                e.accuracy,
                fmt_opt(e.adjust[0]),
                fmt_opt(e.adjust[1]),
                fmt_opt(e.adjust[2])
            );
        }
        out
    }

    /// Difficulty-factor trace: `epoch,df_many,df_medium,df_few,df_all`.
    pub fn difficulty_csv(&self, header_comment: &str) -> String {
        let mut out = format!("# {header_comment}\nepoch,df_many,df_medium,df_few,df_all\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                fmt_opt(e.difficulty[0]),
                fmt_opt(e.difficulty[1]),
                fmt_opt(e.difficulty[2]),
                e.difficulty_all
            );
        }
        out
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Format {
                    path: path.into(),
                    reason: format!("bad number `{s}`"),
                })
            }
        };
        let mut epochs = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            if rec.len() != 6 {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("expected 6 columns, got {}", rec.len()),
                });
            }
            let req = |i: usize| -> Result<f64> {
                parse_opt(&rec[i])?.ok_or_else(|| Error::Format {
                    path: path.into(),
                    reason: format!("missing column {i}"),
                })
            };
            epochs.push(EpochTrace {
                epoch: req(0)? as usize,
                loss: req(1)?,
                accuracy: req(2)?,
                adjust: [parse_opt(&rec[3])?, parse_opt(&rec[4])?, parse_opt(&rec[5])?],
                difficulty: [None; 3],
                difficulty_all: f64::NAN,
            });
        }
        Ok(Self { epochs })
    }

    pub fn save(&self, path: &Path, header_comment: &str) -> Result<()> {
        fs::write(path, self.to_csv(header_comment)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Runs `cfg.epochs` of shuffled mini-batch SGD with momentum and weight decay.
///
/// The update follows the usual heavy-ball form: `v = momentum * v + (g + wd * w)`,
/// `w -= lr * v`. The batch loss is the mean over samples and the last short
/// batch is kept. Shuffling is driven by `cfg.seed` alone.
pub fn train(
    train_set: &Dataset,
    mut model: CosineClassifier,
    cfg: &TrainConfig,
) -> Result<(CosineClassifier, TraceLog)> {
    cfg.validate(train_set.len())?;
    let dims = model.dims();
    if dims.input_dim != train_set.feature_dim() || dims.num_classes != train_set.num_classes() {
        return Err(Error::Config(format!(
            "model expects {} features / {} classes, dataset has {} / {}",
            dims.input_dim,
            dims.num_classes,
            train_set.feature_dim(),
            train_set.num_classes()
        )));
    }
    let loss = cfg.loss.prepare(&train_set.counts)?;
    let subset_of = partition_by_count(&train_set.counts, cfg.thresholds).lookup(dims.num_classes);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = Gradients::zeros_like(&model);
    let mut trace = TraceLog::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut adjust = [Mean::default(); 3];
        let mut difficulty = [Mean::default(); 3];
        let mut difficulty_all = Mean::default();

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model);
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = train_set.sample(i);
                let pass = model.forward_pass(x)?;
                let out = loss.evaluate(&pass.logits, y)?;
                if !out.value.loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_idx,
                        loss: out.value.loss,
                    });
                }
                loss_sum += out.value.loss;
                if linalg::argmax(&pass.logits) == y {
                    correct += 1;
                }
                if let Some(s) = subset_of[y] {
                    adjust[s.index()].push(out.adjust);
                    difficulty[s.index()].push(out.difficulty);
                }
                difficulty_all.push(out.difficulty);
                model.accumulate_backward(x, &pass, &out.value.grad, weight, &mut grads);
            }

            if cfg.weight_decay != 0.0 {
                add_weight_decay(&mut grads, &model, cfg.weight_decay);
            }
            velocity.scale(cfg.momentum);
            velocity.add_scaled(1.0, &grads);
            let mut step = velocity.clone();
            step.scale(lr);
            model.apply_update(&step);
        }

        let n = train_set.len() as f64;
        trace.epochs.push(EpochTrace {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            adjust: adjust.map(Mean::get),
            difficulty: difficulty.map(Mean::get),
            difficulty_all: difficulty_all.get().unwrap_or(0.0),
        });
    }
    Ok((model, trace))
}

fn add_weight_decay(grads: &mut Gradients, model: &CosineClassifier, wd: f64) {
    linalg::axpy(wd, model.class_weights().as_slice(), grads.class_weights.as_mut_slice());
    if let (Some(g), Some(w)) = (grads.embed_weights.as_mut(), model.embed_weights()) {
        linalg::axpy(wd, w.as_slice(), g.as_mut_slice());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    /// `softmax(s * logits)[label]`, without any adjustment.
    pub target_probability: f64,
}

/// Predicts every test sample by raw cosine argmax. Runs on the rayon pool; output is in sample order.
pub fn evaluate(model: &CosineClassifier, test_set: &Dataset, loss: &LossSpec) -> Result<Vec<Prediction>> {
    let dims = model.dims();
    if dims.input_dim != test_set.feature_dim() || dims.num_classes != test_set.num_classes() {
        return Err(Error::Config(format!(
            "model expects {} features / {} classes, dataset has {} / {}",
            dims.input_dim,
            dims.num_classes,
            test_set.feature_dim(),
            test_set.num_classes()
        )));
    }
    loss.validate()?;
    let s = loss.scale_s;
    (0..test_set.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = test_set.sample(i);
            let logits = model.forward(x)?;
            Ok(Prediction {
                index: i,
                label: y,
                predicted: linalg::argmax(&logits),
                target_probability: target_probability(&logits, y, s),
            })
        })
        .collect()
}

pub fn target_probability(logits: &[f64], y: usize, s: f64) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&f| (s * (f - m)).exp()).sum();
    (s * (logits[y] - m)).exp() / total
}

/// Mean adjusting term of a trace row for one subset.
pub fn subset_adjust(row: &EpochTrace, subset: Subset) -> Option<f64> {
    row.adjust[subset.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, LongTailSpec, Spread};
    use crate::linalg::Matrix;
    use crate::losses::{LossKind, LossSpec};
    use crate::model::ModelDims;

    fn small_spec() -> LongTailSpec {
        LongTailSpec {
            num_classes: 4,
            n_max: 40,
            n_min: 4,
            feature_dim: 5,
            intra_class_sigma: Spread::Uniform(0.3),
            confuser_pairs: vec![],
            test_per_class: 5,
            seed: 3,
        }
    }

    fn cfg(kind: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            loss: LossSpec::new(kind),
            seed: 1,
            lr_decay_epochs: vec![2],
            lr_decay_factor: 0.1,
            thresholds: ShotThresholds { many: 20, few: 5 },
        }
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let (train_set, _) = generate(&small_spec()).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(5, 4), 2).unwrap();
        let mut c = cfg(LossKind::Ala);
        c.lr = 0.0;
        let (trained, trace) = train(&train_set, init.clone(), &c).unwrap();
        assert_eq!(trained, init);
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn single_full_batch_step_matches_hand_step() {
        let (train_set, _) = generate(&small_spec()).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(5, 4), 2).unwrap();
        let c = TrainConfig {
            epochs: 1,
            batch_size: train_set.len(),
            lr: 0.3,
            momentum: 0.0,
            weight_decay: 0.0,
            lr_decay_epochs: vec![],
            ..cfg(LossKind::Ala)
        };
        let (trained, _) = train(&train_set, init.clone(), &c).unwrap();

        // Hand-stepped: mean of per-sample ALA gradients chained through backward.
        let n = train_set.len() as f64;
        let mut mean = Matrix::zeros(4, 5);
        for i in 0..train_set.len() {
            let (x, y) = train_set.sample(i);
            let logits = init.forward(x).unwrap();
            let g = crate::losses::ala_loss(&logits, y, &train_set.counts, 30.0).unwrap();
            let back = init.backward(x, &g.grad).unwrap();
            linalg::axpy(1.0 / n, back.class_weights.as_slice(), mean.as_mut_slice());
        }
        for (k, (&w0, &w1)) in init
            .class_weights()
            .as_slice()
            .iter()
            .zip(trained.class_weights().as_slice())
            .enumerate()
        {
            let expected = w0 - 0.3 * mean.as_slice()[k];
            assert!((w1 - expected).abs() < 1e-12, "{k}: {w1} vs {expected}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, _) = generate(&small_spec()).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(5, 4), 2).unwrap();
        let a = train(&train_set, init.clone(), &cfg(LossKind::Ala)).unwrap();
        let b = train(&train_set, init, &cfg(LossKind::Ala)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.to_csv("x"), b.1.to_csv("x"));
    }

    #[test]
    fn ce_separates_balanced_two_class() {
        let spec = LongTailSpec {
            num_classes: 2,
            n_max: 40,
            n_min: 40,
            feature_dim: 2,
            intra_class_sigma: Spread::Uniform(0.1),
            confuser_pairs: vec![crate::data::ConfuserPair {
                a: 0,
                b: 1,
                angle: std::f64::consts::PI,
            }],
            test_per_class: 10,
            seed: 5,
        };
        let (train_set, _) = generate(&spec).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(2, 2), 0).unwrap();
        let c = TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            loss: LossSpec::new(LossKind::Ce),
            seed: 0,
            lr_decay_epochs: vec![],
            lr_decay_factor: 0.1,
            thresholds: ShotThresholds::default(),
        };
        let (_, trace) = train(&train_set, init, &c).unwrap();
        let reached = trace.epochs.iter().any(|e| e.accuracy == 1.0);
        assert!(reached, "final accuracy {}", trace.epochs.last().unwrap().accuracy);
    }

    #[test]
    fn config_errors() {
        let (train_set, _) = generate(&small_spec()).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(5, 4), 2).unwrap();
        let mut c = cfg(LossKind::Ce);
        c.batch_size = train_set.len() + 1;
        assert!(matches!(train(&train_set, init.clone(), &c), Err(Error::Config(_))));
        let wrong = CosineClassifier::init(ModelDims::linear(6, 4), 2).unwrap();
        assert!(matches!(train(&train_set, wrong, &cfg(LossKind::Ce)), Err(Error::Config(_))));
        let mut c = cfg(LossKind::Ce);
        c.momentum = 1.0;
        assert!(matches!(train(&train_set, init, &c), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let (train_set, _) = generate(&small_spec()).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(5, 4), 2).unwrap();
        let mut c = cfg(LossKind::Ce);
        c.lr = 1e300;
        c.momentum = 0.0;
        c.weight_decay = 1e10;
        let err = train(&train_set, init, &c).unwrap_err();
        assert!(
            matches!(err, Error::Divergence { .. } | Error::DegenerateNorm(_)),
            "{err}"
        );
    }

    #[test]
    fn evaluate_aligned_model_is_perfect() {
        let mut spec = small_spec();
        spec.intra_class_sigma = Spread::Uniform(0.0);
        let (_, test) = generate(&spec).unwrap();
        let w = Matrix::from_rows(&test.prototypes).unwrap();
        let model = CosineClassifier::from_class_weights(w);
        let preds = evaluate(&model, &test, &LossSpec::new(LossKind::Ce)).unwrap();
        assert!(preds.iter().all(|p| p.predicted == p.label));
        assert!(preds.iter().enumerate().all(|(i, p)| p.index == i));
    }

    #[test]
    fn uniform_logits_give_one_over_c() {
        assert!((target_probability(&[0.2; 5], 3, 30.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn evaluate_matches_independent_argmax() {
        let (_, test) = generate(&small_spec()).unwrap();
        let model = CosineClassifier::init(ModelDims::linear(5, 4), 77).unwrap();
        let preds = evaluate(&model, &test, &LossSpec::new(LossKind::Ce)).unwrap();
        for (i, p) in preds.iter().enumerate() {
            let (x, _) = test.sample(i);
            let scores: Vec<f64> = model
                .class_weights()
                .row_iter()
                .map(|w| linalg::dot(w, x) / linalg::norm(w))
                .collect();
            let best = (0..4).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
            assert_eq!(p.predicted, best);
        }
    }

    #[test]
    fn trace_csv_round_trip() {
        let (train_set, _) = generate(&small_spec()).unwrap();
        let init = CosineClassifier::init(ModelDims::linear(5, 4), 2).unwrap();
        let (_, trace) = train(&train_set, init, &cfg(LossKind::Ala)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.save(&path, "config_hash=abc seed=1").unwrap();
        let back = TraceLog::from_csv(&path).unwrap();
        assert_eq!(back.len(), trace.len());
        for (a, b) in back.epochs.iter().zip(&trace.epochs) {
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.adjust, b.adjust);
        }
        assert!(trace.epochs.iter().flat_map(|e| e.adjust).flatten().all(|v| v >= 0.0));
    }
}
