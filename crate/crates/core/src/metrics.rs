//! Confusion matrices, macro-averaged classification metrics and
//! mean/sample-SD aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {truth} truth labels vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no labels to score")]
    Empty,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// 3×3 counts; rows are human labels, columns predictions, canonical order.
///
/// `abstained` counts records per human label that received no usable
/// prediction. They count against accuracy and recall but never as a false
/// positive for any class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
    #[serde(default)]
    pub abstained: [u64; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> ConfusionMatrix {
        ConfusionMatrix {
            counts,
            abstained: [0; 3],
        }
    }

    pub fn add(&mut self, truth: Label, pred: Label) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn add_abstention(&mut self, truth: Label) {
        self.abstained[truth.index()] += 1;
    }

    pub fn get(&self, truth: Label, pred: Label) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.abstained.iter().sum::<u64>()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

pub fn confusion(truth: &[Label], pred: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(pred) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Values lie in [0, 1]; files report them ×100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; 3],
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class P/R/F1 with zero for empty denominators; macro values are
/// unweighted means over all three classes.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        support: 0,
    }; 3];
    for (k, pc) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[k][k];
        let predicted: u64 = (0..3).map(|i| cm.counts[i][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum::<u64>() + cm.abstained[k];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        *pc = ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
        };
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    Ok(MetricsReport {
        accuracy: cm.accuracy(),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        support: total,
    })
}

/// Arithmetic mean and sample (n−1) standard deviation; SD is 0 for one value.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Rounds to two decimals, the precision used in result files.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// CSV row in results-table order: model, training %, accuracy, precision,
/// recall, F1 (percentages, two decimals). `None` training % renders as N/A.
pub fn csv_row(model: &str, training_pct: Option<f64>, m: &MetricsReport) -> Vec<String> {
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    vec![
        model.to_string(),
        training_pct.map_or_else(|| "N/A".to_string(), |p| format!("{p}")),
        pct(m.accuracy),
        pct(m.macro_precision),
        pct(m.macro_recall),
        pct(m.macro_f1),
    ]
}

pub const CSV_HEADER: [&str; 6] = [
    "model",
    "training_pct",
    "accuracy",
    "precision",
    "recall",
    "f1",
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use Label::*;

    #[test]
    fn diagonal_confusion() {
        let truth: Vec<Label> = (0..10).map(|i| Label::ALL[i % 3]).collect();
        let cm = confusion(&truth, &truth).unwrap();
        assert_eq!(cm.trace(), 10);
        assert_eq!(cm.total(), 10);
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(
            (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn hand_counted_cells() {
        let cm = confusion(
            &[Correct, Correct, Incomplete, Incorrect],
            &[Correct, Incomplete, Incomplete, Correct],
        )
        .unwrap();
        assert_eq!(cm.get(Correct, Correct), 1);
        assert_eq!(cm.get(Correct, Incomplete), 1);
        assert_eq!(cm.get(Incomplete, Incomplete), 1);
        assert_eq!(cm.get(Incorrect, Correct), 1);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn worked_matrix() {
        // Oracle values recomputed by hand: P = (8/9, 6/10, 8/11), R = (0.8, 0.6, 0.8).
        let cm = ConfusionMatrix::from_counts([[8, 2, 0], [1, 6, 3], [0, 2, 8]]);
        let m = macro_metrics(&cm).unwrap();
        assert_abs_diff_eq!(m.accuracy, 22.0 / 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            m.macro_precision,
            (8.0 / 9.0 + 0.6 + 8.0 / 11.0) / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(m.macro_precision, 0.73872, epsilon = 5e-6);
        assert_abs_diff_eq!(m.macro_recall, 0.73333, epsilon = 5e-6);
        assert_abs_diff_eq!(m.macro_f1, 0.73467, epsilon = 5e-6);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = confusion(&[Correct, Incorrect], &[Correct, Incorrect]).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.per_class[1].f1, 0.0);
        assert_abs_diff_eq!(m.macro_f1, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(confusion(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(
            confusion(&[Correct], &[]),
            Err(MetricsError::LengthMismatch { truth: 1, pred: 0 })
        );
        assert_eq!(
            macro_metrics(&ConfusionMatrix::default()),
            Err(MetricsError::EmptyMatrix)
        );
        assert_eq!(mean_sd(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn mean_sd_examples() {
        let (m, s) = mean_sd(&[93.71, 93.81, 93.41]).unwrap();
        assert_eq!((round2(m), round2(s)), (93.64, 0.21));
        let (m, s) = mean_sd(&[93.91, 93.91, 93.91]).unwrap();
        assert_eq!((round2(m), round2(s)), (93.91, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(mean_sd(&[4.2]).unwrap(), (4.2, 0.0));
    }

    #[test]
    fn abstentions_hurt_recall_only() {
        let mut cm = ConfusionMatrix::default();
        cm.add(Correct, Correct);
        cm.add_abstention(Correct);
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_counts([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let row = csv_row("BMQ1", Some(62.5), &macro_metrics(&cm).unwrap());
        assert_eq!(
            row,
            ["BMQ1", "62.5", "100.00", "100.00", "100.00", "100.00"]
        );
    }
}
