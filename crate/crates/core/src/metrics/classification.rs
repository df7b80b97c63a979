use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true rows of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Unweighted mean F1 over classes with support > 0.
    pub macro_f1: f64,
    /// Equals accuracy for single-label multiclass predictions.
    pub micro_f1: f64,
    pub accuracy: f64,
    /// Attack rows predicted benign over all attack rows.
    pub fnr: f64,
    /// Benign rows predicted as any attack over all benign rows.
    pub fpr: f64,
    pub per_class: Vec<ClassScores>,
    /// `confusion[true][pred]`
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
}

impl MetricsReport {
    pub fn class_f1(&self, class: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.class == class).map(|c| c.f1)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Multiclass scores plus FNR/FPR on the benign-vs-attack binarization
/// (attack is the positive class). Without a benign class both rates are 0.
pub fn classification_report(
    y_true: &[usize],
    y_pred: &[usize],
    classes: &[String],
    benign: Option<usize>,
) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), actual: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("no predictions to score"));
    }
    let c = classes.len();
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l >= c) {
        return Err(contract(format!("label {bad} outside class vocabulary of {c}")));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let n = y_true.len();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();

    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = confusion[k][k];
        let support: usize = confusion[k].iter().sum();
        let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = ratio(2 * tp, support + predicted);
        per_class.push(ClassScores {
            class: classes[k].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let present: Vec<f64> = per_class.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
    let macro_f1 = present.iter().sum::<f64>() / present.len() as f64;

    let (mut fnr, mut fpr) = (0.0, 0.0);
    if let Some(b) = benign {
        let attacks: usize = (0..c).filter(|&k| k != b).map(|k| confusion[k].iter().sum::<usize>()).sum();
        let missed: usize = (0..c).filter(|&k| k != b).map(|k| confusion[k][b]).sum();
        let benign_total: usize = confusion[b].iter().sum();
        let false_alarms = benign_total - confusion[b][b];
        fnr = ratio(missed, attacks);
        fpr = ratio(false_alarms, benign_total);
    }
    let accuracy = ratio(correct, n);
    Ok(MetricsReport {
        macro_f1,
        micro_f1: accuracy,
        accuracy,
        fnr,
        fpr,
        per_class,
        confusion,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect() {
        let y = [0, 1, 2, 1, 0];
        let r = classification_report(&y, &y, &names(3), Some(0)).unwrap();
        assert_eq!((r.macro_f1, r.fnr, r.fpr, r.accuracy), (1.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn all_benign_predictor() {
        let t: Vec<usize> = (0..100).map(|i| usize::from(i % 2 == 1)).collect();
        let p = vec![0; 100];
        let r = classification_report(&t, &p, &names(2), Some(0)).unwrap();
        assert_eq!(r.fnr, 1.0);
        assert_eq!(r.fpr, 0.0);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.micro_f1, r.accuracy);
    }

    #[test]
    fn macro_ignores_absent_classes() {
        let r = classification_report(&[0, 0, 1], &[0, 2, 1], &names(3), None).unwrap();
        assert_eq!(r.per_class[2].support, 0);
        assert_eq!(r.per_class[2].f1, 0.0);
        let expected = (r.per_class[0].f1 + r.per_class[1].f1) / 2.0;
        assert_eq!(r.macro_f1, expected);
    }

    #[test]
    fn rejects_out_of_vocab() {
        assert!(classification_report(&[0], &[5], &names(2), None).is_err());
        assert!(classification_report(&[], &[], &names(2), None).is_err());
        assert!(classification_report(&[0, 1], &[0], &names(2), None).is_err());
    }
}
