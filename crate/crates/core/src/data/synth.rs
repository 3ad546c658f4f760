//! Synthetic surrogate for backbone feature files.
//!
//! Generative recipe, in draw order from a single seeded stream:
//!
//! 1. A 3×3 mixing matrix `M = 2·I + N(0, 0.25)` (drawn once).
//! 2. Per sample: one class per classification task from its prior; latent
//!    `u ~ U(0,1)³`; then features.
//! 3. Feature layout, left to right: one block per classification task with
//!    one dim per class, holding `separation · onehot(class) + noise·ε`; a
//!    3-dim regression block holding `separation · M·u + s(size)·noise·ε`;
//!    the remaining dims are `N(0, 1)` filler that carries no signal.
//! 4. Targets: `x_px = (0.05 + 0.9·u₀)·width`, `y_px = (0.05 + 0.9·u₁)·height`,
//!    `size_mm = lo + u₂·(hi − lo)`. Each is affine in `u`, hence in features.
//!
//! `s(size) = 1 + small_nodule_noise · (hi − size)/(hi − lo)` makes the
//! regression block noisier for small nodules. With `non_nodule_fraction`
//! > 0 the state task gains a `non-nodule` class whose records carry no
//! other label and no regression targets.

use serde::{Deserialize, Serialize};

use super::{Dataset, LabelVocab, NormalizationSpec, SampleRecord, DEFAULT_IMAGE_SIDE_PX};
use crate::error::{Error, Result};
use crate::numcore::RngState;
use crate::task::Task;

pub const NON_NODULE: &str = "non-nodule";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub subtlety: usize,
    pub state: usize,
    pub z: usize,
    pub diagnosis: usize,
}

impl ClassCounts {
    pub fn get(&self, task: Task) -> usize {
        match task {
            Task::Subtlety => self.subtlety,
            Task::State => self.state,
            Task::Z => self.z,
            Task::Diagnosis => self.diagnosis,
            _ => 0,
        }
    }
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            subtlety: 5,
            state: 2,
            z: 3,
            diagnosis: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub samples: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub classes: ClassCounts,
    /// Optional per-task class priors (`[subtlety, state, z, diagnosis]`);
    /// uniform when absent.
    pub priors: Option<[Vec<f64>; 4]>,
    pub separation: f64,
    pub non_nodule_fraction: f64,
    pub small_nodule_noise: f64,
    pub size_range_mm: (f64, f64),
    pub image_width_px: f64,
    pub image_height_px: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            samples: 64,
            feature_dim: 32,
            noise: 0.1,
            seed: 42,
            classes: ClassCounts::default(),
            priors: None,
            separation: 3.0,
            non_nodule_fraction: 0.0,
            small_nodule_noise: 0.0,
            size_range_mm: (3.0, 60.0),
            image_width_px: DEFAULT_IMAGE_SIDE_PX,
            image_height_px: DEFAULT_IMAGE_SIDE_PX,
        }
    }
}

impl SynthSpec {
    fn state_classes(&self) -> usize {
        self.classes.state + usize::from(self.non_nodule_fraction > 0.0)
    }

    /// Dims carrying label information; the rest is filler.
    pub fn signal_dims(&self) -> usize {
        self.classes.subtlety + self.state_classes() + self.classes.z + self.classes.diagnosis + 3
    }

    fn prior(&self, task: Task) -> Vec<f64> {
        match &self.priors {
            Some(p) => p[task.index()].clone(),
            None => vec![1.0; self.classes.get(task)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("synthetic sample count must be at least 1"));
        }
        for t in Task::CLASSIFICATION {
            if self.classes.get(t) < 2 {
                return Err(Error::invalid(format!("synthetic `{t}` needs at least 2 classes")));
            }
            let p = self.prior(t);
            if p.len() != self.classes.get(t) || p.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || p.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid(format!("bad prior for `{t}`: {p:?}")));
            }
        }
        if self.feature_dim < self.signal_dims() {
            return Err(Error::invalid(format!(
                "feature_dim {} is smaller than the {} signal dims",
                self.feature_dim,
                self.signal_dims()
            )));
        }
        let (lo, hi) = self.size_range_mm;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::invalid(format!("bad size range {lo}..{hi}")));
        }
        if !(0.0..1.0).contains(&self.non_nodule_fraction) || self.noise < 0.0 || self.small_nodule_noise < 0.0 {
            return Err(Error::invalid("noise and non-nodule fraction must be non-negative (fraction < 1)"));
        }
        Ok(())
    }

    fn label(&self, task: Task, class: usize) -> String {
        if task == Task::State && class == self.classes.state {
            return NON_NODULE.to_owned();
        }
        match task {
            Task::Subtlety => format!("{:02}", class + 1),
            _ => format!("{task}_{class:02}"),
        }
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed);

    let mut mixing = [[0.0; 3]; 3];
    for (i, row) in mixing.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 2.0 } else { 0.0 } + rng.normal(0.0, 0.25);
        }
    }

    let class_counts: Vec<usize> = Task::CLASSIFICATION
        .iter()
        .map(|&t| if t == Task::State { spec.state_classes() } else { spec.classes.get(t) })
        .collect();

    let mut vocab = LabelVocab::default();
    for t in Task::CLASSIFICATION {
        let mut labels: Vec<String> = (0..class_counts[t.index()]).map(|c| spec.label(t, c)).collect();
        labels.sort();
        match t {
            Task::Subtlety => vocab.subtlety = labels,
            Task::State => vocab.state = labels,
            Task::Z => vocab.z = labels,
            _ => vocab.diagnosis = labels,
        }
    }
    let index_of = |t: Task, c: usize| vocab.index_of(t, &spec.label(t, c)).expect("label in vocab");

    let (lo, hi) = spec.size_range_mm;
    let priors: Vec<Vec<f64>> = Task::CLASSIFICATION.iter().map(|&t| spec.prior(t)).collect();
    let mut records = Vec::with_capacity(spec.samples);
    for n in 0..spec.samples {
        let non_nodule = spec.non_nodule_fraction > 0.0 && rng.unit() < spec.non_nodule_fraction;
        let mut classes = [0usize; 4];
        for t in Task::CLASSIFICATION {
            classes[t.index()] = rng.categorical(&priors[t.index()]);
        }
        if non_nodule {
            classes[Task::State.index()] = spec.classes.state;
        }
        let u = [rng.unit(), rng.unit(), rng.unit()];
        let size_mm = lo + u[2] * (hi - lo);

        let mut features = Vec::with_capacity(spec.feature_dim);
        for t in Task::CLASSIFICATION {
            for c in 0..class_counts[t.index()] {
                let centre = if c == classes[t.index()] { spec.separation } else { 0.0 };
                features.push(centre + spec.noise * rng.standard_normal());
            }
        }
        let reg_noise = if non_nodule {
            spec.noise
        } else {
            spec.noise * (1.0 + spec.small_nodule_noise * (hi - size_mm) / (hi - lo))
        };
        for row in &mixing {
            let signal: f64 = row.iter().zip(&u).map(|(m, u)| m * u).sum();
            features.push(spec.separation * signal + reg_noise * rng.standard_normal());
        }
        while features.len() < spec.feature_dim {
            features.push(rng.standard_normal());
        }

        let label = |t: Task| (!non_nodule || t == Task::State).then(|| index_of(t, classes[t.index()]));
        let value = |v: f64| (!non_nodule).then_some(v);
        records.push(SampleRecord {
            id: format!("syn{n:06}"),
            features,
            subtlety: label(Task::Subtlety),
            state: label(Task::State),
            z: label(Task::Z),
            diagnosis: label(Task::Diagnosis),
            x_px: value((0.05 + 0.9 * u[0]) * spec.image_width_px),
            y_px: value((0.05 + 0.9 * u[1]) * spec.image_height_px),
            size_mm: value(size_mm),
            normalized: [None; 3],
        });
    }

    let norm = NormalizationSpec {
        image_width_px: spec.image_width_px,
        image_height_px: spec.image_height_px,
        size_divisor_mm: None,
    };
    Dataset::new(records, vocab, norm, spec.feature_dim)
}
