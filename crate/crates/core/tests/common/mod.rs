//! Independent oracles: direct evaluation of the loss formulas with naive
//! exp/sum arithmetic, and central finite differences.

#![allow(dead_code)]

use rand::Rng;

/// `-ln(exp(z_y) / sum_j exp(z_j))`, no stabilization.
pub fn naive_softmax_nll(z: &[f64], y: usize) -> f64 {
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    -(z[y].exp() / denom).ln()
}

pub fn naive_probs(z: &[f64]) -> Vec<f64> {
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    z.iter().map(|v| v.exp() / denom).collect()
}

pub fn oracle_ce(logits: &[f64], y: usize, s: f64) -> f64 {
    let z: Vec<f64> = logits.iter().map(|f| s * f).collect();
    naive_softmax_nll(&z, y)
}

/// Adjusted CE with `a` subtracted from every logit (`target_only` masks all but `y`).
pub fn oracle_la(logits: &[f64], y: usize, a: &[f64], target_only: bool, s: f64) -> f64 {
    let z: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let aj = if target_only && j != y { 0.0 } else { a[j] };
            s * (f - aj)
        })
        .collect();
    naive_softmax_nll(&z, y)
}

pub fn oracle_qf(counts: &[usize]) -> Vec<f64> {
    let mut min = counts[0];
    for &c in counts {
        if c < min {
            min = c;
        }
    }
    counts
        .iter()
        .map(|&c| 1.0 / (c as f64 / min as f64 + 1.0).ln())
        .collect()
}

pub fn oracle_df(cos: f64) -> f64 {
    0.5 - 0.5 * cos
}

/// `max_margin * (min / n)^(1/4)`, algebraically equal to `K / n^(1/4)`.
pub fn oracle_ldam(counts: &[usize], max_margin: f64) -> Vec<f64> {
    let min = *counts.iter().min().unwrap() as f64;
    counts
        .iter()
        .map(|&c| max_margin * (min / c as f64).sqrt().sqrt())
        .collect()
}

/// ALA loss written out in full: target-only `A = DF(f_y) * QF_y`, then the
/// adjusted target term against unadjusted non-target terms.
pub fn oracle_ala(logits: &[f64], y: usize, counts: &[usize], s: f64) -> f64 {
    let a = oracle_df(logits[y]) * oracle_qf(counts)[y];
    let target = (s * (logits[y] - a)).exp();
    let others: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, f)| (s * f).exp())
        .sum();
    -(target / (target + others)).ln()
}

pub fn oracle_focal(logits: &[f64], y: usize, s: f64, gamma: f64) -> f64 {
    let z: Vec<f64> = logits.iter().map(|f| s * f).collect();
    let p = naive_probs(&z)[y];
    -(1.0 - p).powf(gamma) * p.ln()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn random_logits(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

pub fn random_counts(rng: &mut impl Rng, c: usize) -> Vec<usize> {
    (0..c).map(|_| rng.random_range(1..=1500)).collect()
}
