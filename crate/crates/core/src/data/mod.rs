//! Dataset schema, CSV ingestion, target normalization, splitting and the
//! synthetic generator.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, save_csv, write_csv, LoadOptions};
pub use synth::{synth_generate, ClassCounts, SynthSpec};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::TaskTargets;
use crate::numcore::{Matrix, RngState};
use crate::task::{Task, TaskMap};

pub const DEFAULT_IMAGE_SIDE_PX: f64 = 2048.0;

/// One example: a feature vector plus raw targets. Missing targets are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub subtlety: Option<usize>,
    pub state: Option<usize>,
    pub z: Option<usize>,
    pub diagnosis: Option<usize>,
    pub x_px: Option<f64>,
    pub y_px: Option<f64>,
    pub size_mm: Option<f64>,
    /// Projected regression targets `[x, y, size]`, filled by normalization.
    pub normalized: [Option<f64>; 3],
}

impl SampleRecord {
    pub fn class(&self, task: Task) -> Option<usize> {
        match task {
            Task::Subtlety => self.subtlety,
            Task::State => self.state,
            Task::Z => self.z,
            Task::Diagnosis => self.diagnosis,
            _ => None,
        }
    }

    pub fn class_mut(&mut self, task: Task) -> Option<&mut Option<usize>> {
        match task {
            Task::Subtlety => Some(&mut self.subtlety),
            Task::State => Some(&mut self.state),
            Task::Z => Some(&mut self.z),
            Task::Diagnosis => Some(&mut self.diagnosis),
            _ => None,
        }
    }

    pub fn raw_value(&self, task: Task) -> Option<f64> {
        match task {
            Task::X => self.x_px,
            Task::Y => self.y_px,
            Task::Size => self.size_mm,
            _ => None,
        }
    }

    pub fn normalized_value(&self, task: Task) -> Option<f64> {
        regression_slot(task).and_then(|i| self.normalized[i])
    }
}

fn regression_slot(task: Task) -> Option<usize> {
    match task {
        Task::X => Some(0),
        Task::Y => Some(1),
        Task::Size => Some(2),
        _ => None,
    }
}

/// Raw label strings for each classification task, in sorted order; a
/// label's position is its class index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelVocab {
    pub subtlety: Vec<String>,
    pub state: Vec<String>,
    pub z: Vec<String>,
    pub diagnosis: Vec<String>,
}

impl LabelVocab {
    /// Builds a vocab from observed labels, sorted and deduplicated.
    pub fn from_observed<'a>(observed: impl Fn(Task) -> Vec<&'a str>) -> Self {
        let sorted = |t: Task| -> Vec<String> {
            observed(t)
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(str::to_owned)
                .collect()
        };
        LabelVocab {
            subtlety: sorted(Task::Subtlety),
            state: sorted(Task::State),
            z: sorted(Task::Z),
            diagnosis: sorted(Task::Diagnosis),
        }
    }

    pub fn labels(&self, task: Task) -> &[String] {
        match task {
            Task::Subtlety => &self.subtlety,
            Task::State => &self.state,
            Task::Z => &self.z,
            Task::Diagnosis => &self.diagnosis,
            _ => &[],
        }
    }

    pub fn num_classes(&self, task: Task) -> usize {
        self.labels(task).len()
    }

    pub fn index_of(&self, task: Task, label: &str) -> Option<usize> {
        self.labels(task).binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, task: Task, index: usize) -> Option<&str> {
        self.labels(task).get(index).map(String::as_str)
    }
}

/// Divisors projecting raw regression targets onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSpec {
    #[serde(default = "default_side")]
    pub image_width_px: f64,
    #[serde(default = "default_side")]
    pub image_height_px: f64,
    /// `None` means "largest size in the dataset being normalized".
    #[serde(default)]
    pub size_divisor_mm: Option<f64>,
}

fn default_side() -> f64 {
    DEFAULT_IMAGE_SIDE_PX
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            image_width_px: DEFAULT_IMAGE_SIDE_PX,
            image_height_px: DEFAULT_IMAGE_SIDE_PX,
            size_divisor_mm: None,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.image_width_px) || !ok(self.image_height_px) || !self.size_divisor_mm.is_none_or(ok) {
            return Err(Error::invalid(format!("normalization divisors must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn divisor(&self, task: Task) -> Result<f64> {
        match task {
            Task::X => Ok(self.image_width_px),
            Task::Y => Ok(self.image_height_px),
            Task::Size => self
                .size_divisor_mm
                .ok_or_else(|| Error::invalid("size divisor is not resolved")),
            _ => Err(Error::invalid(format!("`{task}` is not a regression task"))),
        }
    }

    pub fn to_normalized(&self, task: Task, raw: f64) -> Result<f64> {
        Ok(raw / self.divisor(task)?)
    }

    pub fn to_raw(&self, task: Task, normalized: f64) -> Result<f64> {
        Ok(normalized * self.divisor(task)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub vocab: LabelVocab,
    pub norm: NormalizationSpec,
    pub feature_dim: usize,
    /// Non-fatal findings from loading or normalization.
    pub warnings: Vec<String>,
    normalized: bool,
}

impl Dataset {
    pub fn new(records: Vec<SampleRecord>, vocab: LabelVocab, norm: NormalizationSpec, feature_dim: usize) -> Result<Self> {
        norm.validate()?;
        let ds = Dataset {
            records,
            vocab,
            norm,
            feature_dim,
            warnings: Vec::new(),
            normalized: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.features.len() != self.feature_dim {
                return Err(Error::invalid(format!(
                    "record `{}` has {} features, expected {}",
                    r.id,
                    r.features.len(),
                    self.feature_dim
                )));
            }
            for t in Task::CLASSIFICATION {
                if let Some(c) = r.class(t) {
                    if c >= self.vocab.num_classes(t) {
                        return Err(Error::invalid(format!("record `{}`: `{t}` class {c} outside vocab", r.id)));
                    }
                }
            }
            if r.size_mm.is_some_and(|s| !(s > 0.0)) {
                return Err(Error::invalid(format!("record `{}`: size_mm must be positive", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Projects x/y/size onto `[0, 1]` using this dataset's spec, resolving
    /// the size divisor to the largest observed size when unset.
    pub fn normalize_targets(&self) -> Result<Dataset> {
        let mut spec = self.norm;
        if spec.size_divisor_mm.is_none() {
            let max = self
                .records
                .iter()
                .filter_map(|r| r.size_mm)
                .fold(f64::NEG_INFINITY, f64::max);
            spec.size_divisor_mm = Some(if max.is_finite() { max } else { 1.0 });
        }
        self.normalize_with(spec)
    }

    /// Projects regression targets with a fully resolved spec, e.g. one
    /// stored in a checkpoint.
    pub fn normalize_with(&self, spec: NormalizationSpec) -> Result<Dataset> {
        spec.validate()?;
        spec.divisor(Task::Size)?;
        let mut out = self.clone();
        out.norm = spec;
        let mut out_of_range = 0usize;
        for r in &mut out.records {
            for t in Task::REGRESSION {
                let slot = regression_slot(t).expect("regression task");
                r.normalized[slot] = match r.raw_value(t) {
                    Some(raw) => {
                        let v = spec.to_normalized(t, raw)?;
                        if !(0.0..=1.0).contains(&v) {
                            out_of_range += 1;
                        }
                        Some(v)
                    }
                    None => None,
                };
            }
        }
        if out_of_range > 0 {
            out.warnings
                .push(format!("{out_of_range} regression targets fall outside [0, 1] after normalization"));
        }
        out.normalized = true;
        Ok(out)
    }

    /// Raw values reconstructed from the normalized ones.
    pub fn denormalized(&self, task: Task, record: &SampleRecord) -> Result<Option<f64>> {
        record
            .normalized_value(task)
            .map(|v| self.norm.to_raw(task, v))
            .transpose()
    }

    pub fn feature_matrix(&self) -> Matrix {
        let data = self.records.iter().flat_map(|r| r.features.iter().copied()).collect();
        Matrix::new(self.records.len(), self.feature_dim, data).expect("validated widths")
    }

    /// Training targets: class indices and normalized regression values.
    pub fn targets(&self) -> Result<TaskMap<TaskTargets>> {
        if !self.normalized {
            return Err(Error::invalid("dataset targets are not normalized"));
        }
        Ok(TaskMap::from_fn(|t| {
            if t.is_classification() {
                TaskTargets::Classes(self.records.iter().map(|r| r.class(t)).collect())
            } else {
                TaskTargets::Values(self.records.iter().map(|r| r.normalized_value(t)).collect())
            }
        }))
    }

    pub fn valid_counts(&self) -> TaskMap<usize> {
        TaskMap::from_fn(|t| {
            self.records
                .iter()
                .filter(|r| r.class(t).is_some() || r.raw_value(t).is_some())
                .count()
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            vocab: self.vocab.clone(),
            norm: self.norm,
            feature_dim: self.feature_dim,
            warnings: Vec::new(),
            normalized: self.normalized,
        }
    }
}

/// Seeded shuffle, then the first `round(fraction · n)` records go to train.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = ds.len();
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "split of {n} records at fraction {fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut order);
    Ok((ds.subset(&order[..n_train]), ds.subset(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, size: Option<f64>) -> SampleRecord {
        SampleRecord {
            id: format!("r{id}"),
            features: vec![id as f64, 1.0],
            subtlety: Some(id % 2),
            state: Some(0),
            z: None,
            diagnosis: None,
            x_px: size.map(|_| 1024.0),
            y_px: size.map(|_| 512.0),
            size_mm: size,
            normalized: [None; 3],
        }
    }

    fn dataset(n: usize) -> Dataset {
        let vocab = LabelVocab {
            subtlety: vec!["1".into(), "2".into()],
            state: vec!["nodule".into()],
            z: vec![],
            diagnosis: vec![],
        };
        let records = (0..n).map(|i| record(i, if i % 3 == 0 { None } else { Some(5.0 + i as f64) })).collect();
        Dataset::new(records, vocab, NormalizationSpec::default(), 2).unwrap()
    }

    #[test]
    fn normalization_endpoints_and_inverse() {
        let ds = dataset(10).normalize_targets().unwrap();
        let max = ds.records.iter().filter_map(|r| r.size_mm).fold(0.0, f64::max);
        assert_eq!(ds.norm.size_divisor_mm, Some(max));
        for r in &ds.records {
            if r.x_px.is_some() {
                assert_eq!(r.normalized_value(Task::X), Some(0.5));
                assert_eq!(r.normalized_value(Task::Y), Some(0.25));
            }
            if r.size_mm == Some(max) {
                assert_eq!(r.normalized_value(Task::Size), Some(1.0));
            }
            for t in Task::REGRESSION {
                match (r.raw_value(t), ds.denormalized(t, r).unwrap()) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    other => panic!("mask changed: {other:?}"),
                }
            }
        }
        assert!(ds.warnings.is_empty());
    }

    #[test]
    fn out_of_range_values_warn() {
        let mut ds = dataset(4);
        ds.records[1].x_px = Some(4096.0);
        let n = ds.normalize_targets().unwrap();
        assert_eq!(n.records[1].normalized_value(Task::X), Some(2.0));
        assert_eq!(n.warnings.len(), 1);
    }

    #[test]
    fn split_counts_and_determinism() {
        let ds = dataset(10);
        let (a, b) = split(&ds, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&ds, 0.8, 3).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut ids: Vec<_> = a.records.iter().chain(&b.records).map(|r| r.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);

        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 0.99, 1).is_err());
        assert!(split(&dataset(1), 0.5, 1).is_err());
    }

    const RECORDED_HELD_OUT_SEED_1: [&str; 5] = ["r37", "r14", "r97", "r81", "r11"];

    #[test]
    fn different_seeds_give_different_splits() {
        let ds = dataset(100);
        let ids = |d: &Dataset| d.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        let (a, _) = split(&ds, 0.8, 1).unwrap();
        let (b, _) = split(&ds, 0.8, 2).unwrap();
        assert_ne!(ids(&a), ids(&b));
        let (_, held_out) = split(&ds, 0.8, 1).unwrap();
        assert_eq!(ids(&held_out)[..5], RECORDED_HELD_OUT_SEED_1);
    }

    #[test]
    fn masks_survive_normalization_and_split() {
        let ds = dataset(30);
        let before = ds.valid_counts();
        let n = ds.normalize_targets().unwrap();
        assert_eq!(n.valid_counts(), before);
        let (a, b) = split(&n, 0.7, 9).unwrap();
        for t in Task::ALL {
            assert_eq!(a.valid_counts()[t] + b.valid_counts()[t], before[t]);
        }
        let targets = n.targets().unwrap();
        assert_eq!(targets[Task::Size].valid_count(), before[Task::Size]);
    }

    #[test]
    fn targets_require_normalization() {
        assert!(dataset(3).targets().is_err());
    }

    #[test]
    fn rejects_bad_records() {
        let vocab = LabelVocab::default();
        let mut r = record(0, Some(3.0));
        r.subtlety = None;
        r.state = None;
        r.size_mm = Some(0.0);
        assert!(Dataset::new(vec![r.clone()], vocab.clone(), NormalizationSpec::default(), 2).is_err());
        r.size_mm = Some(1.0);
        assert!(Dataset::new(vec![r.clone()], vocab.clone(), NormalizationSpec::default(), 3).is_err());
        r.state = Some(0);
        assert!(Dataset::new(vec![r], vocab, NormalizationSpec::default(), 2).is_err());
    }
}
