//! Confusion matrix, accuracy, per-class F1, and macro-averaged F1.
//!
//! The macro average always runs over all configured classes, not just the
//! classes present in the evaluated split, and any 0/0 inside a precision,
//! recall, or F1 is defined as 0. Small validation folds can miss a class
//! entirely; this convention keeps their scores well defined and comparable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// C x C count matrix; rows are true classes, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    n_classes: usize,
    /// Display names, index-aligned with class ids.
    pub classes: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_pairs(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Config("confusion matrix needs at least 1 class".into()));
        }
        if preds.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut counts = vec![0u64; n_classes * n_classes];
        for (&p, &t) in preds.iter().zip(labels) {
            if p >= n_classes || t >= n_classes {
                return Err(Error::Label(format!(
                    "class pair (true {t}, predicted {p}) outside 0..{n_classes}"
                )));
            }
            counts[t * n_classes + p] += 1;
        }
        Ok(Self {
            counts,
            n_classes,
            classes: (0..n_classes).map(|c| c.to_string()).collect(),
        })
    }

    pub fn with_class_names(mut self, names: &[&str]) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.classes = names.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks_exact(self.n_classes)
            .map(|r| r.to_vec())
            .collect()
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Data("no evaluated examples in confusion matrix".into()))
        } else {
            Ok(())
        }
    }

    /// trace / total.
    pub fn accuracy(&self) -> Result<f64> {
        self.require_nonempty()?;
        let trace: u64 = (0..self.n_classes).map(|c| self.count(c, c)).sum();
        Ok(trace as f64 / self.total() as f64)
    }

    /// One F1 per class, 0/0 quantities defined as 0.
    pub fn per_class_f1(&self) -> Result<Vec<f64>> {
        self.require_nonempty()?;
        Ok((0..self.n_classes)
            .map(|c| {
                let tp = self.count(c, c) as f64;
                let col: u64 = (0..self.n_classes).map(|t| self.count(t, c)).sum();
                let row: u64 = (0..self.n_classes).map(|p| self.count(c, p)).sum();
                let precision = if col == 0 { 0.0 } else { tp / col as f64 };
                let recall = if row == 0 { 0.0 } else { tp / row as f64 };
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            })
            .collect())
    }

    /// Unweighted mean of per-class F1 over all configured classes.
    pub fn macro_f1(&self) -> Result<f64> {
        let f1 = self.per_class_f1()?;
        Ok(f1.iter().sum::<f64>() / f1.len() as f64)
    }
}

/// Serializable summary of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            accuracy: m.accuracy()?,
            macro_f1: m.macro_f1()?,
            per_class_f1: m.per_class_f1()?,
            confusion: m.rows(),
        })
    }
}
