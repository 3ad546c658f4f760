//! Prediction, per-task reports, size stratification and report rendering.

mod metrics;
mod render;

pub use metrics::{
    accuracy, mae_metric, macro_f1, micro_f1, mse_metric, ClassScores, ConfusionMatrix, ErrorStats, F1Scheme,
};
pub use render::{emit_report, ReportDocument, ReportFormat};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{sigmoid, LossKind};
use crate::network::{HeadKind, MultiTaskNet};
use crate::numcore::{softmax_rows, Matrix};
use crate::task::{Task, TaskMap};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskPrediction {
    /// Predicted class per row and a `rows × C` probability matrix.
    Classes { indices: Vec<usize>, probabilities: Matrix },
    /// Regression output in normalized units.
    Values(Vec<f64>),
}

impl TaskPrediction {
    pub fn indices(&self) -> Option<&[usize]> {
        match self {
            TaskPrediction::Classes { indices, .. } => Some(indices),
            TaskPrediction::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            TaskPrediction::Values(v) => Some(v),
            TaskPrediction::Classes { .. } => None,
        }
    }
}

pub type Predictions = TaskMap<TaskPrediction>;

/// Eval-mode forward pass turned into per-task predictions.
///
/// Softmax heads give class probabilities directly; a single-logit binary
/// head gives `[1 − σ(z), σ(z)]`; a class head trained as regression on
/// `index / (C − 1)` is rounded to the nearest index and reported one-hot.
pub fn predict(net: &MultiTaskNet, features: &Matrix) -> Result<Predictions> {
    let (outputs, _) = net.forward_eval(features)?;
    let n = features.rows();
    let mut out = Vec::with_capacity(Task::ALL.len());
    for t in Task::ALL {
        let spec = net.head_specs()[t];
        let z = &outputs[t];
        let pred = match (spec.kind, spec.loss) {
            (HeadKind::Regression, _) => TaskPrediction::Values(z.as_slice().to_vec()),
            (HeadKind::Classification { .. }, LossKind::SmoothedCe) => {
                let probabilities = softmax_rows(z);
                TaskPrediction::Classes {
                    indices: probabilities.argmax_rows(),
                    probabilities,
                }
            }
            (HeadKind::Classification { .. }, LossKind::Bce) => {
                let mut probabilities = Matrix::zeros(n, 2);
                let mut indices = Vec::with_capacity(n);
                for i in 0..n {
                    let p = sigmoid(z.get(i, 0));
                    probabilities.set(i, 0, 1.0 - p);
                    probabilities.set(i, 1, p);
                    indices.push(usize::from(p > 0.5));
                }
                TaskPrediction::Classes { indices, probabilities }
            }
            (HeadKind::Classification { num_classes }, LossKind::Mse) => {
                let mut probabilities = Matrix::zeros(n, num_classes);
                let top = (num_classes - 1) as f64;
                let indices: Vec<usize> = (0..n)
                    .map(|i| {
                        let v = (z.get(i, 0) * top).round();
                        if v.is_nan() { 0 } else { v.clamp(0.0, top) as usize }
                    })
                    .collect();
                for (i, &c) in indices.iter().enumerate() {
                    probabilities.set(i, c, 1.0);
                }
                TaskPrediction::Classes { indices, probabilities }
            }
        };
        out.push(pred);
    }
    let mut it = out.into_iter();
    Ok(TaskMap::from_fn(|_| it.next().expect("one prediction per task")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub task: Task,
    pub samples: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub labels: Vec<String>,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl ClassificationReport {
    pub fn from_confusion(task: Task, labels: Vec<String>, confusion: ConfusionMatrix, scheme: F1Scheme) -> Result<Self> {
        Ok(ClassificationReport {
            task,
            samples: confusion.total(),
            accuracy: confusion.accuracy()?,
            f1: confusion.f1(scheme)?,
            labels,
            per_class: confusion.per_class(),
            confusion,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitMetrics {
    pub mse: f64,
    pub mae: f64,
}

impl UnitMetrics {
    fn from_stats(s: &ErrorStats) -> Result<Self> {
        Ok(UnitMetrics {
            mse: s.mse()?,
            mae: s.mae()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub task: Task,
    pub samples: u64,
    /// Errors on the `[0, 1]` projected scale.
    pub normalized: UnitMetrics,
    /// Errors in pixels (x, y) or millimetres (size).
    pub raw: UnitMetrics,
    pub raw_unit: String,
}

pub fn raw_unit(task: Task) -> &'static str {
    match task {
        Task::Size => "mm",
        _ => "px",
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskReports {
    pub classification: Vec<ClassificationReport>,
    pub regression: Vec<RegressionReport>,
}

impl TaskReports {
    pub fn classification(&self, task: Task) -> Option<&ClassificationReport> {
        self.classification.iter().find(|r| r.task == task)
    }

    pub fn regression(&self, task: Task) -> Option<&RegressionReport> {
        self.regression.iter().find(|r| r.task == task)
    }
}

/// Reports for the given rows of `ds`. Tasks without a single labelled row
/// are left out. `ds` must have normalized targets.
pub fn evaluate_rows(ds: &Dataset, preds: &Predictions, rows: &[usize], scheme: F1Scheme) -> Result<TaskReports> {
    if !ds.is_normalized() {
        return Err(Error::invalid("evaluation needs normalized targets"));
    }
    let mut reports = TaskReports::default();
    for t in Task::ALL {
        match &preds[t] {
            TaskPrediction::Classes { indices, .. } => {
                check_len(indices.len(), ds.len())?;
                let mut cm = ConfusionMatrix::new(ds.vocab.num_classes(t));
                for &i in rows {
                    if let Some(truth) = ds.records[i].class(t) {
                        cm.record(indices[i], truth)?;
                    }
                }
                if cm.total() > 0 {
                    let labels = ds.vocab.labels(t).to_vec();
                    reports
                        .classification
                        .push(ClassificationReport::from_confusion(t, labels, cm, scheme)?);
                }
            }
            TaskPrediction::Values(values) => {
                check_len(values.len(), ds.len())?;
                let (mut norm, mut raw) = (ErrorStats::default(), ErrorStats::default());
                for &i in rows {
                    let r = &ds.records[i];
                    if let (Some(truth_n), Some(truth_raw)) = (r.normalized_value(t), r.raw_value(t)) {
                        norm.push(values[i], truth_n);
                        raw.push(ds.norm.to_raw(t, values[i])?, truth_raw);
                    }
                }
                if norm.count > 0 {
                    reports.regression.push(RegressionReport {
                        task: t,
                        samples: norm.count,
                        normalized: UnitMetrics::from_stats(&norm)?,
                        raw: UnitMetrics::from_stats(&raw)?,
                        raw_unit: raw_unit(t).to_owned(),
                    });
                }
            }
        }
    }
    Ok(reports)
}

fn check_len(preds: usize, records: usize) -> Result<()> {
    if preds != records {
        return Err(Error::Incompatible(format!("{preds} predictions for {records} records")));
    }
    Ok(())
}

pub fn evaluate(ds: &Dataset, preds: &Predictions, scheme: F1Scheme) -> Result<TaskReports> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    evaluate_rows(ds, preds, &rows, scheme)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeBucket {
    #[serde(rename = "<10")]
    Under10,
    #[serde(rename = "[10,20)")]
    From10To20,
    #[serde(rename = "[20,30)")]
    From20To30,
    #[serde(rename = ">=30")]
    AtLeast30,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] = [
        SizeBucket::Under10,
        SizeBucket::From10To20,
        SizeBucket::From20To30,
        SizeBucket::AtLeast30,
    ];

    /// Half-open buckets so that every size falls in exactly one.
    pub fn of(size_mm: f64) -> SizeBucket {
        if size_mm < 10.0 {
            SizeBucket::Under10
        } else if size_mm < 20.0 {
            SizeBucket::From10To20
        } else if size_mm < 30.0 {
            SizeBucket::From20To30
        } else {
            SizeBucket::AtLeast30
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::Under10 => "<10",
            SizeBucket::From10To20 => "[10,20)",
            SizeBucket::From20To30 => "[20,30)",
            SizeBucket::AtLeast30 => "≥30",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: SizeBucket,
    pub samples: u64,
    pub tasks: TaskReports,
}

/// Per-bucket reports; buckets with no sized record are absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SizeStratifiedReport {
    pub buckets: Vec<BucketReport>,
}

impl SizeStratifiedReport {
    pub fn bucket(&self, b: SizeBucket) -> Option<&BucketReport> {
        self.buckets.iter().find(|r| r.bucket == b)
    }

    pub fn counts(&self) -> [u64; 4] {
        SizeBucket::ALL.map(|b| self.bucket(b).map_or(0, |r| r.samples))
    }
}

/// Buckets records by their true `size_mm`. Returns `None` when no record
/// has a size.
pub fn stratify_by_size(ds: &Dataset, preds: &Predictions, scheme: F1Scheme) -> Result<Option<SizeStratifiedReport>> {
    let mut rows: [Vec<usize>; 4] = Default::default();
    for (i, r) in ds.records.iter().enumerate() {
        if let Some(size) = r.size_mm {
            rows[SizeBucket::of(size) as usize].push(i);
        }
    }
    if rows.iter().all(Vec::is_empty) {
        return Ok(None);
    }
    let mut buckets = Vec::new();
    for (b, rows) in SizeBucket::ALL.into_iter().zip(&rows) {
        if rows.is_empty() {
            continue;
        }
        buckets.push(BucketReport {
            bucket: b,
            samples: rows.len() as u64,
            tasks: evaluate_rows(ds, preds, rows, scheme)?,
        });
    }
    Ok(Some(SizeStratifiedReport { buckets }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub name: String,
    pub f1_scheme: F1Scheme,
    pub samples: u64,
    pub tasks: TaskReports,
    pub stratified: Option<SizeStratifiedReport>,
}

/// Predicts on `ds` and builds the full report.
pub fn evaluate_model(name: &str, net: &MultiTaskNet, ds: &Dataset, scheme: F1Scheme) -> Result<(EvalReport, Predictions)> {
    if ds.feature_dim != net.input_dim() {
        return Err(Error::Incompatible(format!(
            "data has {} features, network expects {}",
            ds.feature_dim,
            net.input_dim()
        )));
    }
    let preds = predict(net, &ds.feature_matrix())?;
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        name: name.to_owned(),
        f1_scheme: scheme,
        samples: ds.len() as u64,
        tasks: evaluate(ds, &preds, scheme)?,
        stratified: stratify_by_size(ds, &preds, scheme)?,
    };
    Ok((report, preds))
}
