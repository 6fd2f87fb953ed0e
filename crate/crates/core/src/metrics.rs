//! Confusion matrices, macro-averaged classification metrics and cross-run
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::CommandLabel;

const K: usize = CommandLabel::COUNT;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion(truth: &[CommandLabel], pred: &[CommandLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(pred) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; K],
}

impl MetricSet {
    /// The four headline metrics with their report names.
    pub fn headline(&self) -> [(&'static str, f64); 4] {
        [
            ("accuracy", self.accuracy),
            ("macro_precision", self.macro_precision),
            ("macro_recall", self.macro_recall),
            ("macro_f1", self.macro_f1),
        ]
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro metrics. Zero denominators score 0; macro averages
/// run over classes present in the truth.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricSet> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let mut per_class = [ClassMetrics::default(); K];
    for (i, m) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[i][i];
        let (col, row) = (cm.col_sum(i), cm.row_sum(i));
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        // 2PR/(P+R) written over counts, so it rounds once
        let f1 = ratio(2 * tp, col + row);
        *m = ClassMetrics { precision, recall, f1, support: cm.row_sum(i) };
    }
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let n = present.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / n;
    let trace: u64 = (0..K).map(|i| cm.counts[i][i]).sum();
    Ok(MetricSet {
        accuracy: ratio(trace, total),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    // Shifting by the first value keeps constant input exact.
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Arithmetic mean and sample standard deviation (n-1) of every field.
pub fn aggregate_runs(runs: &[MetricSet]) -> Result<(MetricSet, MetricSet)> {
    if runs.is_empty() {
        return Err(Error::Data("no runs to aggregate".into()));
    }
    let field = |f: &dyn Fn(&MetricSet) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
    let mut mean = MetricSet::default();
    let mut std = MetricSet::default();
    (mean.accuracy, std.accuracy) = field(&|m| m.accuracy);
    (mean.macro_precision, std.macro_precision) = field(&|m| m.macro_precision);
    (mean.macro_recall, std.macro_recall) = field(&|m| m.macro_recall);
    (mean.macro_f1, std.macro_f1) = field(&|m| m.macro_f1);
    for k in 0..K {
        (mean.per_class[k].precision, std.per_class[k].precision) = field(&|m| m.per_class[k].precision);
        (mean.per_class[k].recall, std.per_class[k].recall) = field(&|m| m.per_class[k].recall);
        (mean.per_class[k].f1, std.per_class[k].f1) = field(&|m| m.per_class[k].f1);
        mean.per_class[k].support = runs.iter().map(|m| m.per_class[k].support).sum();
    }
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use CommandLabel::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let t = [Forward, Left, Stop, Stop, Reverse];
        let cm = confusion(&t, &t).unwrap();
        for i in 0..K {
            for j in 0..K {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!((m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictor_fills_one_column() {
        let t = [Forward, Left, Right, Reverse];
        let cm = confusion(&t, &[Stop; 4]).unwrap();
        assert_eq!((0..K).filter(|&j| cm.col_sum(j) > 0).collect::<Vec<_>>(), vec![4]);
    }

    #[test]
    fn two_class_hand_arithmetic() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = 8;
        cm.counts[0][1] = 2;
        cm.counts[1][0] = 4;
        cm.counts[1][1] = 6;
        let m = metrics_from_confusion(&cm).unwrap();
        let c0 = m.per_class[0];
        assert!((c0.precision - 8.0 / 12.0).abs() < 1e-15);
        assert!((c0.recall - 0.8).abs() < 1e-15);
        assert!((c0.f1 - 0.727_272_727_272_727_3).abs() < 1e-12);
        // classes 2..4 are absent from truth and excluded from the macro mean
        let c1 = m.per_class[1];
        assert!((m.macro_f1 - (c0.f1 + c1.f1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(confusion(&[Forward], &[]).is_err());
        assert!(metrics_from_confusion(&ConfusionMatrix::default()).is_err());
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let mut a = MetricSet::default();
        a.macro_f1 = 0.6;
        let (m, s) = aggregate_runs(&[a]).unwrap();
        assert_eq!(m, a);
        assert_eq!(s.macro_f1, 0.0);
        let mut b = a;
        b.macro_f1 = 0.8;
        let (m, s) = aggregate_runs(&[a, b]).unwrap();
        assert!((m.macro_f1 - 0.7).abs() < 1e-15);
        assert!((s.macro_f1 - 0.141_421_356_237_309_5).abs() < 1e-12);
        let (_, s) = aggregate_runs(&[b, b, b]).unwrap();
        assert_eq!(s.macro_f1, 0.0);
    }
}
