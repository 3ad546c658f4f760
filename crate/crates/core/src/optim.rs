//! Adam and the multi-task training loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{compute_losses, total_loss, SmoothingForm, SmoothingSettings, TaskTargets, TaskWeights};
use crate::network::{Mode, MultiTaskNet};
use crate::numcore::{Matrix, RngState};
use crate::task::TaskMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) || !beta_ok(self.beta1) || !beta_ok(self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("invalid Adam settings: {self:?}")));
        }
        Ok(())
    }
}

/// Adam moments aligned with the network's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        })
    }

    pub fn for_net(config: AdamConfig, net: &MultiTaskNet) -> Result<Self> {
        let shapes: Vec<_> = net.parameters().iter().map(|p| p.value.shape()).collect();
        AdamState::new(config, &shapes)
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "Adam state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() {
                return Err(Error::shape("adam_step param", p.shape(), m.shape()));
            }
            if g.shape() != m.shape() {
                return Err(Error::shape("adam_step grad", g.shape(), m.shape()));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powf(self.t as f64);
        let bias2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let p = p.as_mut_slice();
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                let gi = g.as_slice()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, net: &mut MultiTaskNet, grads: &[Matrix]) -> Result<()> {
    state.step(net.parameters_mut(), grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: TaskWeights,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub smoothing_form: SmoothingForm,
    pub adam: AdamConfig,
    /// Stop after this many epochs without held-out improvement; needs a
    /// validation set.
    pub patience: Option<usize>,
    #[serde(skip)]
    pub trace_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            seed: 42,
            weights: TaskWeights::default(),
            dropout_rate: 0.2,
            alpha: 0.1,
            smoothing_form: SmoothingForm::Standard,
            adam: AdamConfig::default(),
            patience: None,
            trace_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("smoothing alpha {} outside [0, 1)", self.alpha)));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1"));
        }
        self.adam.validate()
    }

    pub fn smoothing(&self) -> SmoothingSettings {
        SmoothingSettings {
            alpha: self.alpha,
            form: self.smoothing_form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub tasks: TaskMap<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train: LossSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<LossSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept when early stopping triggered.
    pub best_epoch: Option<usize>,
}

impl TrainTrace {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let text = self.to_jsonl()?;
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Features and targets prepared once for batching.
struct Prepared {
    features: Matrix,
    targets: TaskMap<TaskTargets>,
}

fn prepare(net: &MultiTaskNet, ds: &Dataset) -> Result<Prepared> {
    if ds.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if ds.feature_dim != net.input_dim() {
        return Err(Error::Incompatible(format!(
            "dataset has {} features, network expects {}",
            ds.feature_dim,
            net.input_dim()
        )));
    }
    let ds = if ds.is_normalized() { ds.clone() } else { ds.normalize_targets()? };
    Ok(Prepared {
        features: ds.feature_matrix(),
        targets: ds.targets()?,
    })
}

/// Eval-mode loss over a whole dataset.
pub fn evaluate_loss(net: &MultiTaskNet, ds: &Dataset, cfg: &TrainConfig) -> Result<LossSummary> {
    let p = prepare(net, ds)?;
    let (out, _) = net.forward_eval(&p.features)?;
    let bundle = compute_losses(&out, &p.targets, net.head_specs(), cfg.smoothing())?;
    Ok(LossSummary {
        total: total_loss(&bundle, &cfg.weights)?,
        tasks: bundle.losses()?,
    })
}

pub fn train(net: MultiTaskNet, ds: &Dataset, cfg: &TrainConfig) -> Result<(MultiTaskNet, TrainTrace)> {
    train_with_validation(net, ds, None, cfg)
}

/// Seeded shuffle per epoch, mini-batches in order (last partial batch kept),
/// λ-weighted head gradients, one Adam step per batch.
pub fn train_with_validation(
    mut net: MultiTaskNet,
    ds: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(MultiTaskNet, TrainTrace)> {
    cfg.validate()?;
    if cfg.patience.is_some() && validation.is_none() {
        return Err(Error::invalid("early stopping needs a validation set"));
    }
    let ds = if ds.is_normalized() { ds.clone() } else { ds.normalize_targets()? };
    // held-out targets are projected with the training divisors
    let validation = validation.map(|v| v.normalize_with(ds.norm)).transpose()?;
    let validation = validation.as_ref();
    let data = prepare(&net, &ds)?;
    net.set_dropout_rate(cfg.dropout_rate)?;
    let mut rng = RngState::new(cfg.seed);
    let mut adam = AdamState::for_net(cfg.adam, &net)?;
    let smoothing = cfg.smoothing();
    let n = data.features.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, usize, MultiTaskNet)> = None;

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        let mut epoch_tasks = TaskMap::splat(0.0);
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features.select_rows(batch);
            let targets = data.targets.map(|_, t| t.select(batch));
            let (out, cache) = net.forward(&x, Mode::Train, &mut rng)?;
            let bundle = compute_losses(&out, &targets, net.head_specs(), smoothing)?;
            let losses = bundle.losses()?;
            if let Some((task, _)) = losses.iter().find(|(_, l)| !l.is_finite()) {
                return Err(Error::NonFiniteLoss { task, epoch });
            }
            let total = total_loss(&bundle, &cfg.weights)?;
            let share = batch.len() as f64 / n as f64;
            epoch_total += total * share;
            for (t, l) in losses.iter() {
                epoch_tasks[t] += l * share;
            }
            let head_grads = bundle.weighted_grads(&cfg.weights)?;
            let grads = net.backward(&cache, &head_grads)?;
            adam_step(&mut adam, &mut net, &grads.params)?;
        }

        let validation_summary = validation.map(|v| evaluate_loss(&net, v, cfg)).transpose()?;
        trace.epochs.push(EpochRecord {
            epoch,
            steps: adam.t,
            train: LossSummary {
                total: epoch_total,
                tasks: epoch_tasks,
            },
            validation: validation_summary.clone(),
        });

        if let (Some(patience), Some(val)) = (cfg.patience, validation_summary) {
            let improved = best.as_ref().is_none_or(|(b, _, _)| val.total < *b);
            if improved {
                best = Some((val.total, epoch, net.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= patience {
                break;
            }
        }
    }

    if let Some((_, epoch, kept)) = best {
        net = kept;
        trace.best_epoch = Some(epoch);
    }
    if let Some(path) = &cfg.trace_path {
        trace.write_jsonl(path)?;
    }
    Ok((net, trace))
}
