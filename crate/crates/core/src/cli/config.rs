//! Declarative run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{NormalizationSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::F1Scheme;
use crate::gradcheck::GradCheckConfig;
use crate::losses::LossAssignment;
use crate::optim::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Feature CSV used by `train`.
    pub train: Option<PathBuf>,
    /// Feature CSV used by `eval` and `predict`; falls back to `train`.
    pub eval: Option<PathBuf>,
    /// When set, `train` holds out this fraction for validation loss and
    /// early stopping.
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkOptions {
    pub hidden: usize,
    pub dropout_in_residual: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            hidden: 512,
            dropout_in_residual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub name: String,
    pub f1_scheme: F1Scheme,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            name: "resmtl".into(),
            f1_scheme: F1Scheme::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckOptions {
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        let d = GradCheckConfig::default();
        GradCheckOptions {
            seeds: d.seeds,
            samples: d.samples,
            input_dim: d.input_dim,
            hidden: d.hidden,
            num_classes: d.num_classes,
            step: d.step,
            tolerance: d.tolerance,
            abs_floor: d.abs_floor,
        }
    }
}

/// Everything a command needs. The top-level `seed` is authoritative: it is
/// copied into `synth.seed` and `train.seed` when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub normalization: NormalizationSpec,
    pub synth: SynthSpec,
    pub network: NetworkOptions,
    pub losses: LossAssignment,
    pub train: TrainConfig,
    pub report: ReportOptions,
    pub gradcheck: GradCheckOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 42,
            data: DataConfig::default(),
            normalization: NormalizationSpec::default(),
            synth: SynthSpec::default(),
            network: NetworkOptions::default(),
            losses: LossAssignment::default(),
            train: TrainConfig::default(),
            report: ReportOptions::default(),
            gradcheck: GradCheckOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    /// Applies the seed and validates every section.
    pub fn resolve(mut self, seed_flag: Option<u64>) -> Result<Self> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(seed) = seed_flag {
            self.seed = seed;
        }
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.normalization.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        if self.network.hidden == 0 {
            return Err(Error::invalid("network.hidden must be at least 1"));
        }
        if let Some(f) = self.data.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("data.validation_fraction {f} outside (0, 1)")));
            }
        }
        if self.train.patience.is_some() && self.data.validation_fraction.is_none() {
            return Err(Error::invalid("train.patience needs data.validation_fraction"));
        }
        let g = &self.gradcheck;
        if g.seeds.is_empty() || g.samples == 0 || g.input_dim == 0 || g.hidden == 0 || g.num_classes < 2 {
            return Err(Error::invalid("gradcheck needs seeds, samples, dims and at least 2 classes"));
        }
        if !(g.step > 0.0 && g.tolerance > 0.0 && g.abs_floor > 0.0) {
            return Err(Error::invalid("gradcheck step, tolerance and floor must be positive"));
        }
        Ok(())
    }

    pub fn gradcheck_config(&self) -> GradCheckConfig {
        let g = &self.gradcheck;
        GradCheckConfig {
            seeds: g.seeds.clone(),
            samples: g.samples,
            input_dim: g.input_dim,
            hidden: g.hidden,
            num_classes: g.num_classes,
            step: g.step,
            tolerance: g.tolerance,
            abs_floor: g.abs_floor,
            smoothing: self.train.smoothing(),
            assignment: self.losses,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
