//! Classification metrics.

use serde::{Deserialize, Serialize};

use super::F1Average;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted means over classes that occur in the ground truth.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Equal to accuracy for single-label classification.
    pub micro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricReport {
    /// Build from a confusion matrix indexed `[true][predicted]`.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let c = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        let per_class: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let support: usize = confusion[k].iter().sum();
                let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect();
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
        let mean = |get: fn(&ClassMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|m| get(m)).sum::<f64>() / present.len() as f64
            }
        };
        let accuracy = ratio(correct, total);
        Self {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            micro_f1: accuracy,
            accuracy,
            per_class,
            confusion,
        }
    }

    pub fn f1(&self, average: F1Average) -> f64 {
        match average {
            F1Average::Macro => self.macro_f1,
            F1Average::Micro => self.micro_f1,
        }
    }
}

/// Metrics of `predicted` against `truth` over `nodes`.
pub fn classification_report(truth: &[usize], predicted: &[usize], nodes: &[usize], class_count: usize) -> MetricReport {
    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for &v in nodes {
        confusion[truth[v]][predicted[v]] += 1;
    }
    MetricReport::from_confusion(confusion)
}
