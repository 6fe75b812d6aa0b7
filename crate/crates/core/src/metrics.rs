//! Top-1 accuracy by class and by shot band, plus predicted-probability curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Subset, SubsetPartition};
use crate::error::{Error, Result};
use crate::train::Prediction;

/// Target probability below which a sample counts as hard.
pub const HARD_THRESHOLD: f64 = 0.2;
/// Target probability above which a sample counts as easy.
pub const EASY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    /// `None` when the subset has no test samples.
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub total: usize,
    pub hard_count: usize,
    pub easy_count: usize,
    /// Target probabilities sorted in descending order.
    pub probability_curve: Vec<f64>,
}

impl SubsetReport {
    fn empty() -> Self {
        Self {
            accuracy: None,
            correct: 0,
            total: 0,
            hard_count: 0,
            easy_count: 0,
            probability_curve: Vec::new(),
        }
    }

    fn push(&mut self, correct: bool, probability: f64) {
        self.total += 1;
        self.correct += usize::from(correct);
        if probability < HARD_THRESHOLD {
            self.hard_count += 1;
        }
        if probability > EASY_THRESHOLD {
            self.easy_count += 1;
        }
        self.probability_curve.push(probability);
    }

    fn finish(&mut self) {
        self.accuracy = (self.total > 0).then(|| self.correct as f64 / self.total as f64);
        self.probability_curve.sort_by(|a, b| b.total_cmp(a));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub many: SubsetReport,
    pub medium: SubsetReport,
    pub few: SubsetReport,
    pub all: SubsetReport,
}

impl MetricsReport {
    pub fn subset(&self, s: Subset) -> &SubsetReport {
        match s {
            Subset::Many => &self.many,
            Subset::Medium => &self.medium,
            Subset::Few => &self.few,
        }
    }

    fn subset_mut(&mut self, s: Subset) -> &mut SubsetReport {
        match s {
            Subset::Many => &mut self.many,
            Subset::Medium => &mut self.medium,
            Subset::Few => &mut self.few,
        }
    }

    /// Many / Medium / Few / All accuracies in that order.
    pub fn accuracies(&self) -> [Option<f64>; 4] {
        [
            self.many.accuracy,
            self.medium.accuracy,
            self.few.accuracy,
            self.all.accuracy,
        ]
    }

    /// Single-row table in the Many | Medium | Few | All layout, accuracies in percent.
    pub fn to_markdown(&self, row_label: &str) -> String {
        let mut out = String::from("| Method | Many | Medium | Few | All |\n|---|---|---|---|---|\n");
        let cells: Vec<String> = self.accuracies().iter().map(|a| fmt_percent(*a)).collect();
        let _ = writeln!(out, "| {row_label} | {} |", cells.join(" | "));
        out
    }
}

pub fn fmt_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{:.1}", 100.0 * a))
}

/// Builds the report from parallel arrays of predictions, target probabilities and labels.
pub fn report(
    predictions: &[usize],
    probabilities: &[f64],
    labels: &[usize],
    partition: &SubsetPartition,
    num_classes: usize,
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() || probabilities.len() != labels.len() {
        return Err(Error::Config(format!(
            "length mismatch: {} predictions, {} probabilities, {} labels",
            predictions.len(),
            probabilities.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Config(format!("label {bad} >= {num_classes} classes")));
    }
    let subset_of = partition.lookup(num_classes);
    let mut out = MetricsReport {
        per_class_accuracy: vec![None; num_classes],
        many: SubsetReport::empty(),
        medium: SubsetReport::empty(),
        few: SubsetReport::empty(),
        all: SubsetReport::empty(),
    };
    let mut class_correct = vec![0usize; num_classes];
    let mut class_total = vec![0usize; num_classes];
    for ((&pred, &prob), &label) in predictions.iter().zip(probabilities).zip(labels) {
        let ok = pred == label;
        class_total[label] += 1;
        class_correct[label] += usize::from(ok);
        if let Some(s) = subset_of[label] {
            out.subset_mut(s).push(ok, prob);
        }
        out.all.push(ok, prob);
    }
    for s in Subset::ALL {
        out.subset_mut(s).finish();
    }
    out.all.finish();
    out.per_class_accuracy = class_correct
        .iter()
        .zip(&class_total)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect();
    Ok(out)
}

pub fn report_predictions(
    predictions: &[Prediction],
    partition: &SubsetPartition,
    num_classes: usize,
) -> Result<MetricsReport> {
    let pred: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let prob: Vec<f64> = predictions.iter().map(|p| p.target_probability).collect();
    let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    report(&pred, &prob, &labels, partition, num_classes)
}
