//! Confusion matrices, per-class clinical metrics and report tables.

mod report;

pub use report::{format_percent, metrics_lines, render_report, UNDEFINED};

use crate::class::Label;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes, both in label order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// TP, FN, FP, TN for one class against the rest.
    pub fn binarize(&self, c: usize) -> [u64; 4] {
        let tp = self.counts[c][c];
        let fn_ = self.row_sum(c) - tp;
        let fp = self.col_sum(c) - tp;
        [tp, fn_, fp, self.total() - tp - fn_ - fp]
    }

    /// Matrix as text: a header row of predicted classes, then one row per
    /// true class.
    pub fn render(&self) -> String {
        let mut s = format!("{:>12}", "true\\pred");
        for l in Label::ALL {
            s.push_str(&format!(" {:>8}", l.name()));
        }
        s.push('\n');
        for t in Label::ALL {
            s.push_str(&format!("{:>12}", t.name()));
            for p in 0..3 {
                s.push_str(&format!(" {:>8}", self.counts[t.index()][p]));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(Label::from_index(t)?, Label::from_index(p)?);
    }
    Ok(cm)
}

/// Metric values; `None` marks a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: [Option<f64>; 3],
    pub ppv: [Option<f64>; 3],
    pub specificity: [Option<f64>; 3],
    pub npv: [Option<f64>; 3],
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("confusion matrix is empty".to_string()));
    }
    let mut r = MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        sensitivity: [None; 3],
        ppv: [None; 3],
        specificity: [None; 3],
        npv: [None; 3],
    };
    for c in 0..3 {
        let [tp, fn_, fp, tn] = cm.binarize(c);
        r.sensitivity[c] = ratio(tp, tp + fn_);
        r.ppv[c] = ratio(tp, tp + fp);
        r.specificity[c] = ratio(tn, tn + fp);
        r.npv[c] = ratio(tn, tn + fn_);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_matrices() {
        let cm = confusion_matrix(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let cm = confusion_matrix(&[0, 0], &[2, 2]).unwrap();
        assert_eq!(cm.counts, [[0, 0, 2], [0, 0, 0], [0, 0, 0]]);
        assert!(confusion_matrix(&[0], &[]).is_err());
        assert!(confusion_matrix(&[3], &[0]).is_err());
    }

    #[test]
    fn hand_checked_example() {
        let cm = ConfusionMatrix::from_counts([[5, 1, 0], [0, 4, 0], [1, 0, 9]]);
        let r = compute_metrics(&cm).unwrap();
        assert_eq!(r.accuracy, 18.0 / 20.0);
        assert_eq!(r.sensitivity[0], Some(5.0 / 6.0));
        assert_eq!(r.ppv[0], Some(5.0 / 6.0));
        // NCP: TP 9, FN 1, FP 0, TN 10. CP: TP 4, FN 0, FP 1, TN 15.
        assert_eq!(r.specificity[2], Some(1.0));
        assert_eq!(r.npv[2], Some(10.0 / 11.0));
        assert_eq!(r.specificity[1], Some(15.0 / 16.0));
        assert_eq!(r.npv[1], Some(1.0));
    }

    #[test]
    fn perfect_and_vacuous() {
        let r = compute_metrics(&ConfusionMatrix::from_counts([[10, 0, 0], [0, 10, 0], [0, 0, 10]]))
            .unwrap();
        assert_eq!(r.accuracy, 1.0);
        for m in [r.sensitivity, r.ppv, r.specificity, r.npv] {
            assert!(m.iter().all(|v| *v == Some(1.0)));
        }
        let r = compute_metrics(&ConfusionMatrix::from_counts([[3, 1, 0], [0, 0, 0], [0, 0, 2]]))
            .unwrap();
        assert_eq!((r.sensitivity[1], r.ppv[1]), (None, Some(0.0)));
        let r = compute_metrics(&ConfusionMatrix::from_counts([[3, 0, 0], [0, 0, 0], [0, 0, 2]]))
            .unwrap();
        assert_eq!((r.sensitivity[1], r.ppv[1], r.specificity[1]), (None, None, Some(1.0)));
        assert!(compute_metrics(&ConfusionMatrix::default()).is_err());
    }
}
