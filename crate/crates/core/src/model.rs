//! Cosine classifier.
//!
//! The logit for class `j` is the cosine between the (optionally embedded)
//! input and the class weight row `W_j`: bias is fixed at zero and both sides
//! are divided by their norms, so every logit lies in `[-1, 1]`. The scale
//! factor `s` belongs to the loss, not to the model.

use std::fs;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    /// Width of the optional rectified hidden layer. `None` means identity embedding.
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: None,
            num_classes,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_dim.unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineClassifier {
    dims: ModelDims,
    seed: u64,
    embed_weights: Option<Matrix>,
    class_weights: Matrix,
}

/// Parameter-shaped gradient (or velocity) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub class_weights: Matrix,
    pub embed_weights: Option<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &CosineClassifier) -> Self {
        Self {
            class_weights: Matrix::zeros(model.class_weights.rows(), model.class_weights.cols()),
            embed_weights: model.embed_weights.as_ref().map(|e| Matrix::zeros(e.rows(), e.cols())),
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) {
        linalg::axpy(alpha, other.class_weights.as_slice(), self.class_weights.as_mut_slice());
        if let (Some(a), Some(b)) = (self.embed_weights.as_mut(), other.embed_weights.as_ref()) {
            linalg::axpy(alpha, b.as_slice(), a.as_mut_slice());
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        linalg::scale(alpha, self.class_weights.as_mut_slice());
        if let Some(e) = self.embed_weights.as_mut() {
            linalg::scale(alpha, e.as_mut_slice());
        }
    }

    pub fn is_zero(&self) -> bool {
        self.class_weights.as_slice().iter().all(|&v| v == 0.0)
            && self
                .embed_weights
                .as_ref()
                .is_none_or(|e| e.as_slice().iter().all(|&v| v == 0.0))
    }
}

/// Intermediate values of one forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pre_activation: Option<Vec<f64>>,
    unit_embedding: Vec<f64>,
    embedding_norm: f64,
    unit_weights: Vec<Vec<f64>>,
    weight_norms: Vec<f64>,
    pub logits: Vec<f64>,
}

fn uniform_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let dist = Uniform::new(-bound, bound).expect("bound is positive and finite");
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        loop {
            m.row_mut(i).iter_mut().for_each(|v| *v = dist.sample(rng));
            if linalg::norm(m.row(i)) > 0.0 {
                break;
            }
        }
    }
    m
}

impl CosineClassifier {
    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with a seeded generator.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.input_dim == 0 || dims.num_classes == 0 || dims.hidden_dim == Some(0) {
            return Err(Error::Config(format!("model dims must be positive: {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_weights = dims.hidden_dim.map(|h| {
            uniform_rows(&mut rng, h, dims.input_dim, 1.0 / (dims.input_dim as f64).sqrt())
        });
        let k = dims.embedding_dim();
        let class_weights = uniform_rows(&mut rng, dims.num_classes, k, 1.0 / (k as f64).sqrt());
        Ok(Self {
            dims,
            seed,
            embed_weights,
            class_weights,
        })
    }

    /// Builds a linear (identity-embedding) classifier from explicit weight rows.
    pub fn from_class_weights(class_weights: Matrix) -> Self {
        let dims = ModelDims::linear(class_weights.cols(), class_weights.rows());
        Self {
            dims,
            seed: 0,
            embed_weights: None,
            class_weights,
        }
    }

    pub fn with_embedding(embed_weights: Matrix, class_weights: Matrix) -> Result<Self> {
        if embed_weights.rows() != class_weights.cols() {
            return Err(Error::Config(format!(
                "embedding produces {} features but class weights expect {}",
                embed_weights.rows(),
                class_weights.cols()
            )));
        }
        let dims = ModelDims {
            input_dim: embed_weights.cols(),
            hidden_dim: Some(embed_weights.rows()),
            num_classes: class_weights.rows(),
        };
        Ok(Self {
            dims,
            seed: 0,
            embed_weights: Some(embed_weights),
            class_weights,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.dims.num_classes
    }

    pub fn class_weights(&self) -> &Matrix {
        &self.class_weights
    }

    pub fn embed_weights(&self) -> Option<&Matrix> {
        self.embed_weights.as_ref()
    }

    pub fn class_weights_mut(&mut self) -> &mut Matrix {
        &mut self.class_weights
    }

    pub fn embed_weights_mut(&mut self) -> Option<&mut Matrix> {
        self.embed_weights.as_mut()
    }

    /// Bias is not a parameter of this model; it is always zero.
    pub fn bias(&self) -> f64 {
        0.0
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_pass(x)?.logits)
    }

    pub fn forward_pass(&self, x: &[f64]) -> Result<ForwardPass> {
        if x.len() != self.dims.input_dim {
            return Err(Error::Config(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dims.input_dim
            )));
        }
        let (pre_activation, embedding) = match &self.embed_weights {
            Some(e) => {
                let a = e.mul_vec(x);
                let h = a.iter().map(|&v| v.max(0.0)).collect();
                (Some(a), h)
            }
            None => (None, x.to_vec()),
        };
        let embedding_norm = linalg::norm(&embedding);
        if !(embedding_norm > 0.0 && embedding_norm.is_finite()) {
            return Err(Error::DegenerateNorm(format!("embedded input has norm {embedding_norm}")));
        }
        let unit_embedding: Vec<f64> = embedding.iter().map(|v| v / embedding_norm).collect();

        let c = self.dims.num_classes;
        let mut unit_weights = Vec::with_capacity(c);
        let mut weight_norms = Vec::with_capacity(c);
        let mut logits = Vec::with_capacity(c);
        for (j, w) in self.class_weights.row_iter().enumerate() {
            let n = linalg::norm(w);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateNorm(format!("class weight row {j} has norm {n}")));
            }
            let unit: Vec<f64> = w.iter().map(|v| v / n).collect();
            logits.push(linalg::dot(&unit, &unit_embedding));
            unit_weights.push(unit);
            weight_norms.push(n);
        }
        Ok(ForwardPass {
            pre_activation,
            unit_embedding,
            embedding_norm,
            unit_weights,
            weight_norms,
            logits,
        })
    }

    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let pass = self.forward_pass(x)?;
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_backward(x, &pass, upstream, 1.0, &mut grads);
        Ok(grads)
    }

    /// Adds `weight * d(upstream · logits)/d(params)` into `grads`.
    ///
    /// Through the normalizations, `d(w/|w|)/dw = (I - w_hat w_hatᵀ)/|w|` on both the
    /// weight and the feature side.
    pub fn accumulate_backward(
        &self,
        x: &[f64],
        pass: &ForwardPass,
        upstream: &[f64],
        weight: f64,
        grads: &mut Gradients,
    ) {
        debug_assert_eq!(upstream.len(), self.dims.num_classes);
        let k = pass.unit_embedding.len();
        let mut grad_unit_embedding = vec![0.0; k];
        for (j, &up) in upstream.iter().enumerate() {
            let u = up * weight;
            if u == 0.0 {
                continue;
            }
            let w_hat = &pass.unit_weights[j];
            let cos = pass.logits[j];
            let inv = u / pass.weight_norms[j];
            let row = grads.class_weights.row_mut(j);
            for ((g, &e), &w) in row.iter_mut().zip(&pass.unit_embedding).zip(w_hat) {
                *g += inv * (e - cos * w);
            }
            linalg::axpy(u, w_hat, &mut grad_unit_embedding);
        }

        let (Some(embed), Some(pre), Some(grad_embed)) = (
            self.embed_weights.as_ref(),
            pass.pre_activation.as_ref(),
            grads.embed_weights.as_mut(),
        ) else {
            return;
        };
        let along = linalg::dot(&grad_unit_embedding, &pass.unit_embedding);
        for i in 0..embed.rows() {
            if pre[i] <= 0.0 {
                continue;
            }
            let g_h = (grad_unit_embedding[i] - along * pass.unit_embedding[i]) / pass.embedding_norm;
            linalg::axpy(g_h, x, grad_embed.row_mut(i));
        }
    }

    /// `params -= step` for a parameter-shaped update.
    pub fn apply_update(&mut self, step: &Gradients) {
        linalg::axpy(-1.0, step.class_weights.as_slice(), self.class_weights.as_mut_slice());
        if let (Some(e), Some(s)) = (self.embed_weights.as_mut(), step.embed_weights.as_ref()) {
            linalg::axpy(-1.0, s.as_slice(), e.as_mut_slice());
        }
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            config_hash: config_hash.to_string(),
            dims: self.dims,
            seed: self.seed,
            embed_weights: self.embed_weights.as_ref().map(|m| m.as_slice().to_vec()),
            class_weights: self.class_weights.as_slice().to_vec(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let dims = ckpt.dims;
        let k = dims.embedding_dim();
        let class_weights = Matrix::from_row_major(dims.num_classes, k, ckpt.class_weights.clone())
            .ok_or_else(|| Error::Config("checkpoint class weights do not match dims".into()))?;
        let embed_weights = match (dims.hidden_dim, &ckpt.embed_weights) {
            (None, None) => None,
            (Some(h), Some(e)) => Some(
                Matrix::from_row_major(h, dims.input_dim, e.clone())
                    .ok_or_else(|| Error::Config("checkpoint embed weights do not match dims".into()))?,
            ),
            _ => return Err(Error::Config("checkpoint embedding does not match hidden_dim".into())),
        };
        Ok(Self {
            dims,
            seed: ckpt.seed,
            embed_weights,
            class_weights,
        })
    }
}

/// Model checkpoint: dims, seed and row-major flattened weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub dims: ModelDims,
    pub seed: u64,
    pub embed_weights: Option<Vec<f64>>,
    pub class_weights: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                id: "checkpoint".into(),
                path: path.into(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
