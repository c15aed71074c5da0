use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no samples")]
    Empty,
    #[error("class {class} outside 0..{classes}")]
    BadClass { class: u8, classes: usize },
}

fn check(preds: &[u8], labels: &[u8], classes: usize) -> Result<(), MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&class) = preds.iter().chain(labels).find(|&&c| c as usize >= classes) {
        return Err(MetricError::BadClass { class, classes });
    }
    Ok(())
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    check(preds, labels, NUM_CLASSES)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Option<Self> {
        (counts.len() == classes * classes).then_some(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// F1 of every class; 0 where the class has no true or predicted samples.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fp = self.col_sum(c) - tp;
                let fn_ = self.row_sum(c) - tp;
                let denom = 2 * tp + fp + fn_;
                if denom == 0 {
                    0.0
                } else {
                    2.0 * tp as f64 / denom as f64
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let f1 = self.per_class_f1();
        f1.iter().sum::<f64>() / self.classes as f64
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

pub fn confusion_over(
    preds: &[u8],
    labels: &[u8],
    classes: usize,
) -> Result<ConfusionMatrix, MetricError> {
    check(preds, labels, classes)?;
    let mut m = ConfusionMatrix::zeros(classes);
    for (&p, &l) in preds.iter().zip(labels) {
        m.counts[l as usize * classes + p as usize] += 1;
    }
    Ok(m)
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricError> {
    confusion_over(preds, labels, NUM_CLASSES)
}

/// Unweighted mean of per-class F1 over all 15 classes, absent classes counting 0.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    Ok(confusion(preds, labels)?.macro_f1())
}

/// Macro F1 averaged over the first `classes` class ids.
pub fn macro_f1_over(preds: &[u8], labels: &[u8], classes: usize) -> Result<f64, MetricError> {
    Ok(confusion_over(preds, labels, classes)?.macro_f1())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_extremes() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 0], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(
            accuracy(&[1], &[1, 2]),
            Err(MetricError::LengthMismatch {
                preds: 1,
                labels: 2
            })
        );
        assert_eq!(accuracy(&[], &[]), Err(MetricError::Empty));
        assert_eq!(
            accuracy(&[15], &[0]),
            Err(MetricError::BadClass {
                class: 15,
                classes: 15
            })
        );
    }

    #[test]
    fn confusion_hand_count() {
        let labels = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 1, 0, 2];
        let m = confusion(&preds, &labels).unwrap();
        assert_eq!(m.get(0, 0), 1);
        assert_eq!(m.get(0, 1), 1);
        assert_eq!(m.get(1, 1), 2);
        assert_eq!(m.get(2, 0), 1);
        assert_eq!(m.get(2, 2), 1);
        assert_eq!(m.total(), 6);
        assert_eq!(m.trace(), 4);
        assert_eq!(m.row_sum(2), 2);
        assert_eq!(m.accuracy(), 4.0 / 6.0);
    }

    #[test]
    fn macro_f1_cases() {
        let all: Vec<u8> = (0..15).collect();
        assert_eq!(macro_f1(&all, &all).unwrap(), 1.0);
        // always predicting class 0 on a balanced two-class set
        let f1 = macro_f1_over(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
        // absent classes count as zero over all fifteen
        let f1 = macro_f1(&[3, 3], &[3, 3]).unwrap();
        assert!((f1 - 1.0 / 15.0).abs() < 1e-12);
    }
}
