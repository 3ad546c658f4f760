//! Accuracy, F1, MSE and MAE over sufficient statistics that can be merged
//! across disjoint subsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Scheme {
    #[default]
    Macro,
    Micro,
}

/// `counts[truth][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_pairs(preds: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        if preds.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                preds.len(),
                truth.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(num_classes);
        for (&p, &t) in preds.iter().zip(truth) {
            cm.record(p, t)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, pred: usize, truth: usize) -> Result<()> {
        if pred >= self.num_classes || truth >= self.num_classes {
            return Err(Error::invalid(format!(
                "label pair ({pred}, {truth}) outside {} classes",
                self.num_classes
            )));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::invalid("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::invalid("accuracy of an empty sample")),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }

    pub fn per_class(&self) -> Vec<ClassScores> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let support: u64 = self.counts[c].iter().sum();
                let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                ClassScores {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect()
    }

    /// Unweighted mean of per-class F1; classes with `P + R = 0` count as 0.
    pub fn macro_f1(&self) -> Result<f64> {
        if self.total() == 0 || self.num_classes == 0 {
            return Err(Error::invalid("F1 of an empty sample"));
        }
        Ok(self.per_class().iter().map(|s| s.f1).sum::<f64>() / self.num_classes as f64)
    }

    /// Pooled F1, equal to accuracy for single-label problems.
    pub fn micro_f1(&self) -> Result<f64> {
        self.accuracy()
    }

    pub fn f1(&self, scheme: F1Scheme) -> Result<f64> {
        match scheme {
            F1Scheme::Macro => self.macro_f1(),
            F1Scheme::Micro => self.micro_f1(),
        }
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn check_lengths(preds: usize, truth: usize) -> Result<()> {
    if preds != truth {
        return Err(Error::invalid(format!("{preds} predictions for {truth} labels")));
    }
    if preds == 0 {
        return Err(Error::invalid("metric of an empty sample"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn macro_f1(preds: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    ConfusionMatrix::from_pairs(preds, truth, num_classes)?.macro_f1()
}

pub fn micro_f1(preds: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    ConfusionMatrix::from_pairs(preds, truth, num_classes)?.micro_f1()
}

/// Count, sum of squared errors and sum of absolute errors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: u64,
    pub sum_sq: f64,
    pub sum_abs: f64,
}

impl ErrorStats {
    pub fn push(&mut self, pred: f64, truth: f64) {
        let d = pred - truth;
        self.count += 1;
        self.sum_sq += d * d;
        self.sum_abs += d.abs();
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        self.count += other.count;
        self.sum_sq += other.sum_sq;
        self.sum_abs += other.sum_abs;
    }

    pub fn mse(&self) -> Result<f64> {
        self.nonempty().map(|n| self.sum_sq / n)
    }

    pub fn mae(&self) -> Result<f64> {
        self.nonempty().map(|n| self.sum_abs / n)
    }

    fn nonempty(&self) -> Result<f64> {
        match self.count {
            0 => Err(Error::invalid("regression metric with zero valid samples")),
            n => Ok(n as f64),
        }
    }

    pub fn from_masked(preds: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<Self> {
        if preds.len() != truth.len() || mask.is_some_and(|m| m.len() != preds.len()) {
            return Err(Error::invalid("prediction, truth and mask lengths differ"));
        }
        let mut s = ErrorStats::default();
        for (i, (&p, &t)) in preds.iter().zip(truth).enumerate() {
            if mask.is_none_or(|m| m[i]) {
                s.push(p, t);
            }
        }
        Ok(s)
    }
}

pub fn mse_metric(preds: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    ErrorStats::from_masked(preds, truth, mask)?.mse()
}

pub fn mae_metric(preds: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    ErrorStats::from_masked(preds, truth, mask)?.mae()
}
