//! Softmax losses over cosine logits, with per-class and per-instance logit adjustment.
//!
//! Every loss here is a softmax cross-entropy over `s * (logits - A)` for some
//! adjusting term `A` (zero for plain CE), except focal loss which reweights CE
//! by `(1 - p_y)^gamma`. Gradients are returned with respect to the raw logits,
//! so they carry the factor `s` from the chain rule. Adjusting terms are treated
//! as constants: no gradient flows through the difficulty factor even though it
//! is computed from the target logit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SCALE: f64 = 30.0;
pub const DEFAULT_LDAM_MAX_MARGIN: f64 = 0.5;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

/// Slack allowed on a cosine before it is rejected rather than clamped.
pub const COSINE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ce")]
    Ce,
    #[serde(rename = "qf")]
    QfOnly,
    #[serde(rename = "df")]
    DfOnly,
    #[serde(rename = "ldam")]
    Ldam,
    #[serde(rename = "df-ldam")]
    DfTimesLdam,
    #[serde(rename = "ala")]
    Ala,
    #[serde(rename = "focal")]
    Focal,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Ce,
        LossKind::Ldam,
        LossKind::DfOnly,
        LossKind::QfOnly,
        LossKind::DfTimesLdam,
        LossKind::Ala,
        LossKind::Focal,
    ];

    /// Command-line / file name of the kind.
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::QfOnly => "qf",
            LossKind::DfOnly => "df",
            LossKind::Ldam => "ldam",
            LossKind::DfTimesLdam => "df-ldam",
            LossKind::Ala => "ala",
            LossKind::Focal => "focal",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Ce => "CE",
            LossKind::QfOnly => "QF",
            LossKind::DfOnly => "DF",
            LossKind::Ldam => "LDAM",
            LossKind::DfTimesLdam => "DF·A^LDAM",
            LossKind::Ala => "DF·QF (ALA)",
            LossKind::Focal => "Focal",
        }
    }

    pub fn uses_difficulty(self) -> bool {
        matches!(self, LossKind::DfOnly | LossKind::DfTimesLdam | LossKind::Ala)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss kind `{s}`")))
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_scale() -> f64 {
    DEFAULT_SCALE
}
fn default_margin() -> f64 {
    DEFAULT_LDAM_MAX_MARGIN
}
fn default_gamma() -> f64 {
    DEFAULT_FOCAL_GAMMA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_scale")]
    pub scale_s: f64,
    #[serde(default = "default_margin")]
    pub ldam_max_margin: f64,
    #[serde(default = "default_gamma")]
    pub focal_gamma: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            scale_s: DEFAULT_SCALE,
            ldam_max_margin: DEFAULT_LDAM_MAX_MARGIN,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }

    pub fn with_scale(mut self, s: f64) -> Self {
        self.scale_s = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_s > 0.0 && self.scale_s.is_finite()) {
            return Err(Error::Config(format!("scale_s must be positive, got {}", self.scale_s)));
        }
        if !(self.ldam_max_margin > 0.0 && self.ldam_max_margin.is_finite()) {
            return Err(Error::Config(format!(
                "ldam_max_margin must be positive, got {}",
                self.ldam_max_margin
            )));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "focal_gamma must be non-negative, got {}",
                self.focal_gamma
            )));
        }
        Ok(())
    }

    /// Precomputes the class-level terms this loss needs from the training counts.
    pub fn prepare(&self, counts: &[usize]) -> Result<PreparedLoss> {
        self.validate()?;
        let class_term = match self.kind {
            LossKind::QfOnly | LossKind::Ala => Some(quantity_factor(counts)?),
            LossKind::Ldam | LossKind::DfTimesLdam => Some(ldam_adjust(counts, self.ldam_max_margin)?),
            LossKind::Ce | LossKind::DfOnly | LossKind::Focal => {
                validate_counts(counts)?;
                None
            }
        };
        Ok(PreparedLoss {
            spec: *self,
            num_classes: counts.len(),
            class_term,
        })
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::new(LossKind::Ala)
    }
}

/// Non-negative adjusting term `A`, subtracted from the logits inside the softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustingTerm {
    pub values: Vec<f64>,
    /// When set only `values[y]` is applied; the rest are treated as zero.
    pub target_only: bool,
}

impl AdjustingTerm {
    pub fn zeros(c: usize) -> Self {
        Self {
            values: vec![0.0; c],
            target_only: false,
        }
    }

    /// `A` with a single non-zero entry at the target.
    pub fn target(c: usize, y: usize, value: f64) -> Self {
        let mut values = vec![0.0; c];
        values[y] = value;
        Self {
            values,
            target_only: true,
        }
    }

    pub fn applied(&self, j: usize, y: usize) -> f64 {
        if self.target_only && j != y {
            0.0
        } else {
            self.values[j]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Derivative of `loss` with respect to the raw (unscaled) logits.
    pub grad: Vec<f64>,
}

fn check_inputs(logits: &[f64], y: usize) -> Result<()> {
    if y >= logits.len() {
        return Err(Error::Config(format!("target {y} out of range for {} classes", logits.len())));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("logit {v}")));
    }
    Ok(())
}

fn validate_counts(counts: &[usize]) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::InvalidCounts("no classes".into()));
    }
    if let Some(j) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidCounts(format!("class {j} has zero samples")));
    }
    Ok(())
}

/// Softmax cross-entropy on already-scaled logits `z`.
///
/// Returns `(loss, probabilities, 1 - p_y)`. `1 - p_y` is accumulated from the
/// non-target probabilities so it stays accurate when `p_y` is close to one.
fn softmax_xent(z: &[f64], y: usize) -> (f64, Vec<f64>, f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let rest: f64 = probs.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, p)| p).sum();
    let loss = if z[y] >= m {
        let tail: f64 = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &v)| (v - z[y]).exp())
            .sum();
        tail.ln_1p()
    } else {
        (m - z[y]) + total.ln()
    };
    (loss, probs, rest)
}

fn xent_value(z: &[f64], y: usize, s: f64) -> LossValue {
    let (loss, probs, rest) = softmax_xent(z, y);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == y { -s * rest } else { s * p })
        .collect();
    LossValue { loss, grad }
}

/// `-log softmax(s * logits)[y]`.
pub fn ce_loss(logits: &[f64], y: usize, s: f64) -> Result<LossValue> {
    check_inputs(logits, y)?;
    let z: Vec<f64> = logits.iter().map(|&f| s * f).collect();
    Ok(xent_value(&z, y, s))
}

/// Logit-adjusted cross-entropy: softmax over `s * (logits - A)`.
pub fn la_loss(logits: &[f64], y: usize, adjust: &AdjustingTerm, s: f64) -> Result<LossValue> {
    check_inputs(logits, y)?;
    if adjust.values.len() != logits.len() {
        return Err(Error::Config(format!(
            "adjusting term has {} entries for {} logits",
            adjust.values.len(),
            logits.len()
        )));
    }
    if let Some(v) = adjust.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::NumericInput(format!("adjusting term {v} must be finite and >= 0")));
    }
    let z: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &f)| s * (f - adjust.applied(j, y)))
        .collect();
    Ok(xent_value(&z, y, s))
}

/// `QF[j] = 1 / ln(S_j / min S + 1)`.
pub fn quantity_factor(counts: &[usize]) -> Result<Vec<f64>> {
    quantity_factor_with_base(counts, std::f64::consts::E)
}

/// Quantity factor with an explicit logarithm base; only rescales the natural-log version.
pub fn quantity_factor_with_base(counts: &[usize], base: f64) -> Result<Vec<f64>> {
    validate_counts(counts)?;
    if !(base > 1.0 && base.is_finite()) {
        return Err(Error::Config(format!("log base must be > 1, got {base}")));
    }
    let min = *counts.iter().min().expect("non-empty") as f64;
    Ok(counts
        .iter()
        .map(|&n| 1.0 / (n as f64 / min + 1.0).log(base))
        .collect())
}

/// `DF = (1 - cos) / 2`. Inputs within [`COSINE_SLACK`] of the interval are clamped.
pub fn difficulty_factor(cos_target: f64) -> Result<f64> {
    if cos_target.is_nan() || cos_target.abs() > 1.0 + COSINE_SLACK {
        return Err(Error::Domain {
            value: cos_target,
            domain: "[-1, 1]",
        });
    }
    Ok((1.0 - cos_target.clamp(-1.0, 1.0)) / 2.0)
}

pub fn ala_adjust(cos_target: f64, qf_target: f64) -> Result<f64> {
    if !(qf_target > 0.0 && qf_target.is_finite()) {
        return Err(Error::NumericInput(format!("quantity factor {qf_target} must be positive")));
    }
    Ok(difficulty_factor(cos_target)? * qf_target)
}

/// ALA loss given the target class's quantity factor directly.
pub fn ala_loss_for_target(logits: &[f64], y: usize, qf_target: f64, s: f64) -> Result<LossValue> {
    check_inputs(logits, y)?;
    let a = ala_adjust(logits[y], qf_target)?;
    la_loss(logits, y, &AdjustingTerm::target(logits.len(), y, a), s)
}

/// Adaptive logit adjustment: target-only `A[y] = DF(cos_y) * QF[y]`, with `A` detached.
pub fn ala_loss(logits: &[f64], y: usize, counts: &[usize], s: f64) -> Result<LossValue> {
    if counts.len() != logits.len() {
        return Err(Error::Config(format!(
            "{} counts for {} logits",
            counts.len(),
            logits.len()
        )));
    }
    check_inputs(logits, y)?;
    let qf = quantity_factor(counts)?;
    ala_loss_for_target(logits, y, qf[y], s)
}

/// LDAM-style margins `K / n_j^(1/4)`, with `K` chosen so the largest margin is `max_margin`.
pub fn ldam_adjust(counts: &[usize], max_margin: f64) -> Result<Vec<f64>> {
    validate_counts(counts)?;
    if !(max_margin > 0.0 && max_margin.is_finite()) {
        return Err(Error::Config(format!("max_margin must be positive, got {max_margin}")));
    }
    let min = *counts.iter().min().expect("non-empty") as f64;
    let k = max_margin * min.powf(0.25);
    Ok(counts.iter().map(|&n| k / (n as f64).powf(0.25)).collect())
}

/// `-(1 - p_y)^gamma * log p_y` over `softmax(s * logits)`.
pub fn focal_loss(logits: &[f64], y: usize, s: f64, gamma: f64) -> Result<LossValue> {
    check_inputs(logits, y)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be non-negative, got {gamma}")));
    }
    let z: Vec<f64> = logits.iter().map(|&f| s * f).collect();
    let (ce, probs, q) = softmax_xent(&z, y);
    if gamma == 0.0 {
        let grad = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| if j == y { -s * q } else { s * p })
            .collect();
        return Ok(LossValue { loss: ce, grad });
    }
    let p = probs[y];
    let log_p = -ce;
    // dL/dz_k = c * (p_k - [k = y]) with c = q^gamma - gamma * q^(gamma-1) * p * log p
    let qg = q.powf(gamma);
    let loss = qg * ce;
    let grad = if q == 0.0 {
        vec![0.0; z.len()]
    } else {
        let c = qg - gamma * q.powf(gamma - 1.0) * p * log_p;
        probs
            .iter()
            .enumerate()
            .map(|(j, &pj)| if j == y { -s * c * q } else { s * c * pj })
            .collect()
    };
    Ok(LossValue { loss, grad })
}

/// A loss bound to a class-count profile, ready to evaluate per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLoss {
    spec: LossSpec,
    num_classes: usize,
    /// `QF` or the LDAM margins, depending on the kind.
    class_term: Option<Vec<f64>>,
}

/// Per-sample loss evaluation plus the factors used, for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub value: LossValue,
    /// Applied `A[y]` (zero for CE and focal).
    pub adjust: f64,
    /// Difficulty factor of the sample, whether or not the loss uses it.
    pub difficulty: f64,
}

impl PreparedLoss {
    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn class_term(&self) -> Option<&[f64]> {
        self.class_term.as_deref()
    }

    /// Target adjustment for a sample of class `y` with target cosine `cos_y`.
    pub fn target_adjustment(&self, cos_y: f64, y: usize) -> Result<f64> {
        let df = difficulty_factor(cos_y)?;
        let class = self.class_term.as_ref().map_or(1.0, |t| t[y]);
        Ok(match self.spec.kind {
            LossKind::Ce | LossKind::Focal => 0.0,
            LossKind::QfOnly | LossKind::Ldam => class,
            LossKind::DfOnly | LossKind::DfTimesLdam | LossKind::Ala => df * class,
        })
    }

    pub fn evaluate(&self, logits: &[f64], y: usize) -> Result<SampleLoss> {
        if logits.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} logits for a loss prepared with {} classes",
                logits.len(),
                self.num_classes
            )));
        }
        check_inputs(logits, y)?;
        let s = self.spec.scale_s;
        let difficulty = difficulty_factor(logits[y])?;
        let adjust = self.target_adjustment(logits[y], y)?;
        let value = match self.spec.kind {
            LossKind::Ce => ce_loss(logits, y, s)?,
            LossKind::Focal => focal_loss(logits, y, s, self.spec.focal_gamma)?,
            _ => la_loss(logits, y, &AdjustingTerm::target(logits.len(), y, adjust), s)?,
        };
        Ok(SampleLoss {
            value,
            adjust,
            difficulty,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn ce_uniform_two_class() {
        let v = ce_loss(&[0.0, 0.0], 0, 1.0).unwrap();
        assert!(close(v.loss, LN_2, 1e-15));
        assert!(close(v.grad[0], -0.5, 1e-15));
        assert!(close(v.grad[1], 0.5, 1e-15));
    }

    #[test]
    fn la_hand_example() {
        let a = AdjustingTerm::target(2, 0, 3f64.ln());
        let v = la_loss(&[0.0, 0.0], 0, &a, 1.0).unwrap();
        assert!(close(v.loss, 4f64.ln(), 1e-14));
        // sigma_y = 0.25
        assert!(close(v.grad[0], -0.75, 1e-14));
        assert!(close(v.grad[1], 0.75, 1e-14));
    }

    #[test]
    fn target_only_masks_other_entries() {
        let a = AdjustingTerm {
            values: vec![0.3, 0.7, 0.1],
            target_only: true,
        };
        let logits = [0.2, -0.1, 0.4];
        let masked = la_loss(&logits, 1, &a, 5.0).unwrap();
        let explicit = la_loss(&logits, 1, &AdjustingTerm::target(3, 1, 0.7), 5.0).unwrap();
        assert_eq!(masked, explicit);
        let full = la_loss(&logits, 1, &AdjustingTerm { target_only: false, ..a }, 5.0).unwrap();
        assert_ne!(masked.loss, full.loss);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(matches!(ce_loss(&[f64::NAN, 0.0], 0, 1.0), Err(Error::NumericInput(_))));
        assert!(matches!(focal_loss(&[f64::INFINITY, 0.0], 0, 1.0, 2.0), Err(Error::NumericInput(_))));
        let neg = AdjustingTerm {
            values: vec![-0.1, 0.0],
            target_only: false,
        };
        assert!(matches!(la_loss(&[0.0, 0.0], 0, &neg, 1.0), Err(Error::NumericInput(_))));
    }

    #[test]
    fn quantity_factor_values() {
        let qf = quantity_factor(&[1280, 100, 5]).unwrap();
        // 1/ln(257), 1/ln(21), 1/ln(2)
        assert!(close(qf[0], 0.18021017998330121, 1e-14));
        assert!(close(qf[1], 0.328_458_738_753_051, 1e-14));
        assert!(close(qf[2], std::f64::consts::LOG2_E, 1e-14));
        let flat = quantity_factor(&[7, 7, 7]).unwrap();
        assert!(flat.iter().all(|&v| v == 1.0 / LN_2));
        assert!(matches!(quantity_factor(&[3, 0]), Err(Error::InvalidCounts(_))));
        assert!(matches!(quantity_factor(&[]), Err(Error::InvalidCounts(_))));
        let base2 = quantity_factor_with_base(&[5, 5], 2.0).unwrap();
        assert!(close(base2[0], 1.0, 1e-15));
    }

    #[test]
    fn difficulty_factor_boundaries() {
        assert_eq!(difficulty_factor(1.0).unwrap(), 0.0);
        assert_eq!(difficulty_factor(-1.0).unwrap(), 1.0);
        assert_eq!(difficulty_factor(0.0).unwrap(), 0.5);
        assert_eq!(difficulty_factor(1.0 + 5e-10).unwrap(), 0.0);
        assert_eq!(difficulty_factor(-1.0 - 5e-10).unwrap(), 1.0);
        assert!(matches!(difficulty_factor(1.0 + 1e-6), Err(Error::Domain { .. })));
        assert!(difficulty_factor(f64::NAN).is_err());
    }

    #[test]
    fn ala_adjust_values() {
        assert_eq!(ala_adjust(1.0, 3.0).unwrap(), 0.0);
        assert!(close(ala_adjust(-1.0, 1.0 / LN_2).unwrap(), 1.0 / LN_2, 1e-15));
        assert!(close(ala_adjust(0.0, 1.0 / LN_2).unwrap(), 0.7213475204444817, 1e-15));
        assert!(ala_adjust(0.0, 0.0).is_err());
    }

    #[test]
    fn ala_golden() {
        // -ln(e^{30(-0.3 - A)} / (e^{30(-0.3 - A)} + e^6 + e^3)), A = 0.65/ln 2
        let v = ala_loss(&[0.2, 0.1, -0.3], 2, &[500, 50, 5], 30.0).unwrap();
        assert!(close(v.loss, 43.18114064890853, 1e-12), "{}", v.loss);
    }

    #[test]
    fn ala_easy_sample_equals_ce() {
        let logits = [0.3, -0.2, 1.0];
        let a = ala_loss(&logits, 2, &[9, 9, 9], 30.0).unwrap();
        let b = ce_loss(&logits, 2, 30.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ldam_values() {
        let a = ldam_adjust(&[16, 1], 0.5).unwrap();
        assert!(close(a[0], 0.25, 1e-15));
        assert_eq!(a[1], 0.5);
        let flat = ldam_adjust(&[4, 4, 4], 0.3).unwrap();
        assert!(flat.iter().all(|&v| close(v, 0.3, 1e-15)));
    }

    #[test]
    fn focal_gamma_zero_is_ce() {
        let logits = [0.1, 0.5, -0.7, 0.2];
        assert_eq!(focal_loss(&logits, 1, 30.0, 0.0).unwrap(), ce_loss(&logits, 1, 30.0).unwrap());
    }

    #[test]
    fn focal_decays_faster_than_ce() {
        for t in [0.3, 0.6, 0.9, 1.0] {
            let logits = [t, 0.0, 0.0];
            let f = focal_loss(&logits, 0, 10.0, 2.0).unwrap().loss;
            let c = ce_loss(&logits, 0, 10.0).unwrap().loss;
            assert!(f < c);
        }
    }

    #[test]
    fn prepared_kinds_compose_factors() {
        let counts = [500, 50, 5];
        let logits = [0.2, 0.1, -0.3];
        let qf = quantity_factor(&counts).unwrap();
        let ldam = ldam_adjust(&counts, 0.5).unwrap();
        let df = difficulty_factor(logits[2]).unwrap();
        let expect = [
            (LossKind::Ce, 0.0),
            (LossKind::QfOnly, qf[2]),
            (LossKind::DfOnly, df),
            (LossKind::Ldam, ldam[2]),
            (LossKind::DfTimesLdam, df * ldam[2]),
            (LossKind::Ala, df * qf[2]),
            (LossKind::Focal, 0.0),
        ];
        for (kind, a) in expect {
            let out = LossSpec::new(kind).prepare(&counts).unwrap().evaluate(&logits, 2).unwrap();
            assert_eq!(out.adjust, a, "{kind}");
            assert_eq!(out.difficulty, df);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
        assert!("bogus".parse::<LossKind>().is_err());
    }

    proptest! {
        #[test]
        fn gradients_sum_to_zero(logits in prop::collection::vec(-1.0f64..1.0, 2..8), yi in 0usize..8, s in 0.5f64..40.0, gamma in 0.0f64..4.0) {
            let y = yi % logits.len();
            let counts: Vec<usize> = (0..logits.len()).map(|j| 500 / (j + 1)).collect();
            for v in [
                ce_loss(&logits, y, s).unwrap(),
                ala_loss(&logits, y, &counts, s).unwrap(),
                focal_loss(&logits, y, s, gamma).unwrap(),
            ] {
                let sum: f64 = v.grad.iter().sum();
                let mag: f64 = v.grad.iter().map(|g| g.abs()).sum();
                prop_assert!(sum.abs() <= 1e-12 * mag.max(1.0));
                prop_assert!(v.loss >= 0.0);
            }
        }

        #[test]
        fn adjustment_never_lowers_loss(logits in prop::collection::vec(-1.0f64..1.0, 2..8), yi in 0usize..8, a in 1e-3f64..2.0) {
            let y = yi % logits.len();
            let base = ce_loss(&logits, y, 30.0).unwrap().loss;
            let adj = la_loss(&logits, y, &AdjustingTerm::target(logits.len(), y, a), 30.0).unwrap().loss;
            prop_assert!(adj >= base);
        }

        #[test]
        fn factors_are_monotone(counts in prop::collection::vec(1usize..2000, 1..20)) {
            let qf = quantity_factor(&counts).unwrap();
            let ldam = ldam_adjust(&counts, 0.5).unwrap();
            for i in 0..counts.len() {
                prop_assert!(qf[i] > 0.0 && ldam[i] > 0.0);
                for j in 0..counts.len() {
                    if counts[i] <= counts[j] {
                        prop_assert!(qf[i] >= qf[j]);
                        prop_assert!(ldam[i] >= ldam[j]);
                    }
                }
            }
        }
    }
}
