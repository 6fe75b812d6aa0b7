//! Synthetic long-tailed datasets.
//!
//! Classes are sorted head to tail: class 0 has `n_max` training samples and
//! class `C - 1` has `n_min`, with a geometric profile in between. Each class is
//! an isotropic Gaussian cloud around a unit prototype. Difficulty is controlled
//! separately from frequency through the per-class spread and through
//! "confuser" pairs whose prototypes are pinned to a chosen angle.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Per-class cluster spread. A single number applies to every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spread {
    Uniform(f64),
    PerClass(Vec<f64>),
}

impl Spread {
    pub fn for_class(&self, class: usize) -> f64 {
        match self {
            Spread::Uniform(s) => *s,
            Spread::PerClass(v) => v[class],
        }
    }
}

impl Default for Spread {
    fn default() -> Self {
        Spread::Uniform(0.5)
    }
}

/// Two classes whose prototypes are forced to a fixed angular separation (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfuserPair {
    pub a: usize,
    pub b: usize,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub n_max: usize,
    pub n_min: usize,
    pub feature_dim: usize,
    #[serde(default)]
    pub intra_class_sigma: Spread,
    #[serde(default)]
    pub confuser_pairs: Vec<ConfuserPair>,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            n_max: 500,
            n_min: 5,
            feature_dim: 16,
            intra_class_sigma: Spread::default(),
            confuser_pairs: Vec::new(),
            test_per_class: 50,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad(format!(
                "need 1 <= n_min <= n_max, got n_min={} n_max={}",
                self.n_min, self.n_max
            ));
        }
        if self.feature_dim < 2 {
            return bad(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if self.test_per_class == 0 {
            return bad("test_per_class must be positive".into());
        }
        match &self.intra_class_sigma {
            Spread::Uniform(s) if !(s.is_finite() && *s >= 0.0) => {
                return bad(format!("intra_class_sigma must be finite and >= 0, got {s}"));
            }
            Spread::PerClass(v) if v.len() != self.num_classes => {
                return bad(format!(
                    "intra_class_sigma has {} entries for {} classes",
                    v.len(),
                    self.num_classes
                ));
            }
            Spread::PerClass(v) if v.iter().any(|s| !(s.is_finite() && *s >= 0.0)) => {
                return bad("intra_class_sigma entries must be finite and >= 0".into());
            }
            _ => {}
        }
        for p in &self.confuser_pairs {
            if p.a >= self.num_classes || p.b >= self.num_classes {
                return bad(format!(
                    "confuser pair ({}, {}) out of range for {} classes",
                    p.a, p.b, self.num_classes
                ));
            }
            if p.a == p.b {
                return bad(format!("confuser pair ({}, {}) is not distinct", p.a, p.b));
            }
            if !(p.angle > 0.0 && p.angle <= std::f64::consts::PI) {
                return bad(format!("confuser angle {} not in (0, pi]", p.angle));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Samples per class in this split.
    pub counts: Vec<usize>,
    pub prototypes: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPartition {
    pub many: BTreeSet<usize>,
    pub medium: BTreeSet<usize>,
    pub few: BTreeSet<usize>,
}

/// The three shot bands, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Many,
    Medium,
    Few,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Many, Subset::Medium, Subset::Few];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Many => "many",
            Subset::Medium => "medium",
            Subset::Few => "few",
        }
    }
}

impl SubsetPartition {
    pub fn subset_of(&self, class: usize) -> Option<Subset> {
        if self.many.contains(&class) {
            Some(Subset::Many)
        } else if self.medium.contains(&class) {
            Some(Subset::Medium)
        } else if self.few.contains(&class) {
            Some(Subset::Few)
        } else {
            None
        }
    }

    pub fn classes(&self, subset: Subset) -> &BTreeSet<usize> {
        match subset {
            Subset::Many => &self.many,
            Subset::Medium => &self.medium,
            Subset::Few => &self.few,
        }
    }

    /// Subset index per class, `None` for classes outside the partition.
    pub fn lookup(&self, num_classes: usize) -> Vec<Option<Subset>> {
        (0..num_classes).map(|c| self.subset_of(c)).collect()
    }
}

/// Shot-band thresholds: many is `> many`, few is `<= few`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotThresholds {
    pub many: usize,
    pub few: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self { many: 100, few: 20 }
    }
}

pub fn class_counts(spec: &LongTailSpec) -> Result<Vec<usize>> {
    let c = spec.num_classes;
    if c == 0 {
        return Err(Error::InvalidSpec("num_classes must be at least 1".into()));
    }
    if spec.n_min == 0 || spec.n_min > spec.n_max {
        return Err(Error::InvalidSpec(format!(
            "need 1 <= n_min <= n_max, got n_min={} n_max={}",
            spec.n_min, spec.n_max
        )));
    }
    if c == 1 {
        return Ok(vec![spec.n_max]);
    }
    let ratio = spec.n_min as f64 / spec.n_max as f64;
    let counts = (0..c)
        .map(|j| {
            let n = (spec.n_max as f64 * ratio.powf(j as f64 / (c - 1) as f64)).round() as usize;
            n.clamp(spec.n_min, spec.n_max)
        })
        .collect();
    Ok(counts)
}

pub fn partition_by_count(counts: &[usize], thresholds: ShotThresholds) -> SubsetPartition {
    let mut part = SubsetPartition {
        many: BTreeSet::new(),
        medium: BTreeSet::new(),
        few: BTreeSet::new(),
    };
    for (j, &n) in counts.iter().enumerate() {
        if n > thresholds.many {
            part.many.insert(j);
        } else if n <= thresholds.few {
            part.few.insert(j);
        } else {
            part.medium.insert(j);
        }
    }
    part
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rotates `moving` inside span{anchor, moving} so that it sits at `angle` from `anchor`.
fn place_at_angle(anchor: &[f64], moving: &[f64], angle: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let along = linalg::dot(anchor, moving);
    let mut ortho: Vec<f64> = moving
        .iter()
        .zip(anchor)
        .map(|(m, a)| m - along * a)
        .collect();
    let mut n = linalg::norm(&ortho);
    // Parallel prototypes leave no plane to rotate in; pick any orthogonal direction.
    while n < 1e-9 {
        let r = random_unit_vector(rng, anchor.len());
        let p = linalg::dot(anchor, &r);
        ortho = r.iter().zip(anchor).map(|(x, a)| x - p * a).collect();
        n = linalg::norm(&ortho);
    }
    let (s, c) = angle.sin_cos();
    anchor
        .iter()
        .zip(&ortho)
        .map(|(a, o)| c * a + s * o / n)
        .collect()
}

fn sample_split(
    rng: &mut ChaCha8Rng,
    spec: &LongTailSpec,
    prototypes: &[Vec<f64>],
    counts: &[usize],
) -> Dataset {
    let d = spec.feature_dim;
    let total: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (class, (&n, proto)) in counts.iter().zip(prototypes).enumerate() {
        let sigma = spec.intra_class_sigma.for_class(class);
        for _ in 0..n {
            for &p in proto {
                let z: f64 = rng.sample(StandardNormal);
                data.push(p + sigma * z);
            }
            labels.push(class);
        }
    }
    Dataset {
        features: Matrix::from_row_major(total, d, data).expect("shape matches by construction"),
        labels,
        counts: counts.to_vec(),
        prototypes: prototypes.to_vec(),
    }
}

/// Draws `(train, test)` from the spec. The generator is seeded from `spec.seed` alone.
pub fn generate(spec: &LongTailSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| random_unit_vector(&mut rng, spec.feature_dim))
        .collect();
    for pair in &spec.confuser_pairs {
        prototypes[pair.b] = place_at_angle(&prototypes[pair.a], &prototypes[pair.b], pair.angle, &mut rng);
    }

    let train_counts = class_counts(spec)?;
    let test_counts = vec![spec.test_per_class; spec.num_classes];
    let train = sample_split(&mut rng, spec, &prototypes, &train_counts);
    let test = sample_split(&mut rng, spec, &prototypes, &test_counts);
    Ok((train, test))
}

/// JSON sidecar stored next to the split CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config_hash: String,
    pub seed: u64,
    pub spec: LongTailSpec,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub prototypes: Vec<Vec<f64>>,
    pub thresholds: ShotThresholds,
    pub partition: SubsetPartition,
}

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const SIDECAR_JSON: &str = "dataset.json";

/// Writes one split as CSV: a `# config_hash=…` comment line, a header
/// `f0,…,f{d-1},label`, then one row per sample.
pub fn write_split_csv(path: &Path, data: &Dataset, config_hash: &str, seed: u64) -> Result<()> {
    let mut out = format!("# config_hash={config_hash} seed={seed}\n");
    let d = data.feature_dim();
    let header: Vec<String> = (0..d).map(|k| format!("f{k}")).chain(["label".into()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, label) in data.features.row_iter().zip(&data.labels) {
        for v in row {
            // `Display` for f64 is the shortest string that parses back to the same bits.
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&label.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_split_csv(path: &Path, num_classes: usize) -> Result<(Matrix, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let d = headers.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| Error::Format {
        path: path.into(),
        reason: "expected feature columns followed by a label column".into(),
    })?;
    if headers.get(d) != Some("label") {
        return Err(Error::Format {
            path: path.into(),
            reason: "last column must be `label`".into(),
        });
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let fmt_err = |reason: String| Error::Format {
            path: path.into(),
            reason: format!("row {}: {reason}", line + 1),
        };
        for field in record.iter().take(d) {
            data.push(field.parse::<f64>().map_err(|e| fmt_err(e.to_string()))?);
        }
        let label: usize = record[d].parse().map_err(|e: std::num::ParseIntError| fmt_err(e.to_string()))?;
        if label >= num_classes {
            return Err(fmt_err(format!("label {label} >= {num_classes} classes")));
        }
        labels.push(label);
    }
    let rows = labels.len();
    let features = Matrix::from_row_major(rows, d, data).expect("every row has d fields");
    Ok((features, labels))
}

/// Writes `train.csv`, `test.csv` and `dataset.json` into `dir`.
pub fn save_dataset(
    dir: &Path,
    spec: &LongTailSpec,
    train: &Dataset,
    test: &Dataset,
    thresholds: ShotThresholds,
    config_hash: &str,
) -> Result<DatasetSidecar> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_split_csv(&dir.join(TRAIN_CSV), train, config_hash, spec.seed)?;
    write_split_csv(&dir.join(TEST_CSV), test, config_hash, spec.seed)?;
    let sidecar = DatasetSidecar {
        config_hash: config_hash.to_string(),
        seed: spec.seed,
        spec: spec.clone(),
        num_classes: train.num_classes(),
        feature_dim: train.feature_dim(),
        counts: train.counts.clone(),
        test_counts: test.counts.clone(),
        prototypes: train.prototypes.clone(),
        thresholds,
        partition: partition_by_count(&train.counts, thresholds),
    };
    let path = dir.join(SIDECAR_JSON);
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, Dataset, DatasetSidecar)> {
    let path = dir.join(SIDECAR_JSON);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            id: "dataset".into(),
            path,
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: DatasetSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let split = |name: &str, expected: &[usize]| -> Result<Dataset> {
        let p = dir.join(name);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                id: "dataset".into(),
                path: p,
            });
        }
        let (features, labels) = read_split_csv(&p, sidecar.num_classes)?;
        let mut counts = vec![0; sidecar.num_classes];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts != expected || features.cols() != sidecar.feature_dim {
            return Err(Error::Format {
                path: p,
                reason: "split does not match the counts or dimension in the sidecar".into(),
            });
        }
        Ok(Dataset {
            features,
            labels,
            counts,
            prototypes: sidecar.prototypes.clone(),
        })
    };
    let train = split(TRAIN_CSV, &sidecar.counts)?;
    let test = split(TEST_CSV, &sidecar.test_counts)?;
    Ok((train, test, sidecar))
}
