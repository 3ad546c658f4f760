//! Task losses and the weighted multi-task total.
//!
//! Every loss returns its batch-mean value together with the gradient with
//! respect to the head output it consumed. Rows whose target is missing are
//! masked: they contribute neither loss nor gradient, and the mean is taken
//! over valid rows only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{HeadKind, HeadSpec};
use crate::numcore::{log_softmax_rows, softmax_rows, Matrix};
use crate::task::{Task, TaskMap};

/// Which loss a head is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Label-smoothing cross-entropy over `C` logits.
    SmoothedCe,
    /// Binary cross-entropy on a single logit; binary tasks only.
    Bce,
    /// Mean squared error on a single output.
    Mse,
}

/// How the smoothing term enters the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingForm {
    /// Cross-entropy against `q = (1-α)·onehot + α/C`.
    #[default]
    Standard,
    /// `-(1-α)·log p_y - α`: the smoothing term is a constant and only
    /// rescales the hard-label gradient. Kept for comparison runs.
    ConstantOffset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSmoothingConfig {
    pub alpha: f64,
    pub num_classes: usize,
    pub form: SmoothingForm,
}

impl LabelSmoothingConfig {
    pub fn new(alpha: f64, num_classes: usize) -> Result<Self> {
        let cfg = LabelSmoothingConfig {
            alpha,
            num_classes,
            form: SmoothingForm::Standard,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_form(mut self, form: SmoothingForm) -> Self {
        self.form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "smoothing alpha {} outside [0, 1)",
                self.alpha
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "label smoothing needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Smoothed target distribution for one true class.
    pub fn target_distribution(&self, class: usize) -> Vec<f64> {
        let c = self.num_classes as f64;
        (0..self.num_classes)
            .map(|k| {
                let hard = if k == class { 1.0 } else { 0.0 };
                (1.0 - self.alpha) * hard + self.alpha / c
            })
            .collect()
    }
}

/// Loss value, head-output gradient and number of contributing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLoss {
    pub loss: f64,
    pub grad: Matrix,
    pub valid: usize,
}

pub fn label_smoothing_ce(
    logits: &Matrix,
    targets: &[usize],
    cfg: &LabelSmoothingConfig,
) -> Result<(f64, Matrix)> {
    let targets: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
    let out = label_smoothing_ce_masked(logits, &targets, cfg)?;
    Ok((out.loss, out.grad))
}

pub fn label_smoothing_ce_masked(
    logits: &Matrix,
    targets: &[Option<usize>],
    cfg: &LabelSmoothingConfig,
) -> Result<TaskLoss> {
    cfg.validate()?;
    if logits.cols() != cfg.num_classes {
        return Err(Error::invalid(format!(
            "logits have {} columns but {} classes are configured",
            logits.cols(),
            cfg.num_classes
        )));
    }
    check_rows(logits, targets.len(), "label_smoothing_ce")?;
    if let Some(bad) = targets.iter().flatten().find(|&&t| t >= cfg.num_classes) {
        return Err(Error::invalid(format!(
            "target class {bad} out of range for {} classes",
            cfg.num_classes
        )));
    }

    let valid = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    if valid == 0 {
        return Ok(TaskLoss {
            loss: 0.0,
            grad,
            valid,
        });
    }
    let probs = softmax_rows(logits);
    let log_probs = log_softmax_rows(logits);
    let inv_n = 1.0 / valid as f64;
    let mut total = 0.0;
    for (r, target) in targets.iter().enumerate() {
        let Some(class) = *target else { continue };
        match cfg.form {
            SmoothingForm::Standard => {
                let q = cfg.target_distribution(class);
                for (c, &qc) in q.iter().enumerate() {
                    total -= qc * log_probs.get(r, c);
                    grad.set(r, c, (probs.get(r, c) - qc) * inv_n);
                }
            }
            SmoothingForm::ConstantOffset => {
                let keep = 1.0 - cfg.alpha;
                total += -keep * log_probs.get(r, class) - cfg.alpha;
                for c in 0..cfg.num_classes {
                    let hard = if c == class { 1.0 } else { 0.0 };
                    grad.set(r, c, keep * (probs.get(r, c) - hard) * inv_n);
                }
            }
        }
    }
    Ok(TaskLoss {
        loss: total * inv_n,
        grad,
        valid,
    })
}

/// Mean squared error over the rows whose mask flag is set.
pub fn mse(pred: &Matrix, target: &Matrix, mask: Option<&[bool]>) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", pred.shape(), target.shape()));
    }
    if let Some(m) = mask {
        check_rows(pred, m.len(), "mse mask")?;
    }
    let keep = |r: usize| mask.is_none_or(|m| m[r]);
    let valid = (0..pred.rows()).filter(|&r| keep(r)).count();
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    if valid == 0 {
        return Ok((0.0, grad));
    }
    // N counts valid samples; a sample may carry several output columns.
    let inv_n = 1.0 / valid as f64;
    let mut total = 0.0;
    for r in (0..pred.rows()).filter(|&r| keep(r)) {
        for c in 0..pred.cols() {
            let diff = pred.get(r, c) - target.get(r, c);
            total += diff * diff;
            grad.set(r, c, 2.0 * diff * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}

fn mse_masked(pred: &Matrix, targets: &[Option<f64>]) -> Result<TaskLoss> {
    check_rows(pred, targets.len(), "mse")?;
    let target = Matrix::column(targets.iter().map(|t| t.unwrap_or(0.0)).collect());
    let mask: Vec<bool> = targets.iter().map(Option::is_some).collect();
    let (loss, grad) = mse(pred, &target, Some(&mask))?;
    Ok(TaskLoss {
        loss,
        grad,
        valid: mask.iter().filter(|&&m| m).count(),
    })
}

/// Stable binary cross-entropy on logits: `max(z,0) - z·t + ln(1 + e^{-|z|})`.
pub fn bce_with_logits(logit: &Matrix, target: &[f64]) -> Result<(f64, Matrix)> {
    let targets: Vec<Option<f64>> = target.iter().copied().map(Some).collect();
    let out = bce_with_logits_masked(logit, &targets)?;
    Ok((out.loss, out.grad))
}

pub fn bce_with_logits_masked(logit: &Matrix, targets: &[Option<f64>]) -> Result<TaskLoss> {
    if logit.cols() != 1 {
        return Err(Error::invalid(format!(
            "bce_with_logits expects one logit column, got {}",
            logit.cols()
        )));
    }
    check_rows(logit, targets.len(), "bce_with_logits")?;
    if let Some(bad) = targets.iter().flatten().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::invalid(format!("binary target {bad} is not 0 or 1")));
    }
    let valid = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = Matrix::zeros(logit.rows(), 1);
    if valid == 0 {
        return Ok(TaskLoss {
            loss: 0.0,
            grad,
            valid,
        });
    }
    let inv_n = 1.0 / valid as f64;
    let mut total = 0.0;
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let z = logit.get(r, 0);
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad.set(r, 0, (sigmoid(z) - t) * inv_n);
    }
    Ok(TaskLoss {
        loss: total * inv_n,
        grad,
        valid,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_rows(m: &Matrix, n: usize, op: &'static str) -> Result<()> {
    if m.rows() != n {
        return Err(Error::shape(op, m.shape(), (n, m.cols())));
    }
    Ok(())
}

/// Non-negative weight per task in the total loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskMap<f64>", into = "TaskMap<f64>")]
pub struct TaskWeights(TaskMap<f64>);

impl TaskWeights {
    pub fn new(lambda: TaskMap<f64>) -> Result<Self> {
        for (t, &w) in lambda.iter() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("weight for `{t}` must be finite and >= 0, got {w}")));
            }
        }
        Ok(TaskWeights(lambda))
    }

    pub fn uniform(value: f64) -> Result<Self> {
        TaskWeights::new(TaskMap::splat(value))
    }

    pub fn get(&self, task: Task) -> f64 {
        self.0[task]
    }

    pub fn all_zero(&self) -> bool {
        self.0.values().all(|&w| w == 0.0)
    }

    pub fn as_map(&self) -> &TaskMap<f64> {
        &self.0
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights(TaskMap::splat(1.0))
    }
}

impl TryFrom<TaskMap<f64>> for TaskWeights {
    type Error = Error;

    fn try_from(m: TaskMap<f64>) -> Result<Self> {
        TaskWeights::new(m)
    }
}

impl From<TaskWeights> for TaskMap<f64> {
    fn from(w: TaskWeights) -> Self {
        w.0
    }
}

/// Per-task losses for one batch. A task may be absent while the bundle is
/// being assembled; `total_loss` requires every entry.
#[derive(Debug, Clone, Default)]
pub struct TaskLossBundle {
    pub entries: TaskMap<Option<TaskLoss>>,
}

impl TaskLossBundle {
    pub fn insert(&mut self, task: Task, loss: TaskLoss) {
        self.entries[task] = Some(loss);
    }

    pub fn get(&self, task: Task) -> Result<&TaskLoss> {
        self.entries[task]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("loss bundle has no entry for `{task}`")))
    }

    pub fn losses(&self) -> Result<TaskMap<f64>> {
        self.entries.try_map(|t, _| self.get(t).map(|l| l.loss))
    }

    /// Head gradients scaled by their task weights, ready for backward.
    pub fn weighted_grads(&self, weights: &TaskWeights) -> Result<TaskMap<Matrix>> {
        self.entries
            .try_map(|t, _| self.get(t).map(|l| l.grad.scale(weights.get(t))))
    }
}

/// `Σ_k λ_k · L_k` over all seven tasks.
pub fn total_loss(bundle: &TaskLossBundle, weights: &TaskWeights) -> Result<f64> {
    let mut total = 0.0;
    for t in Task::ALL {
        total += weights.get(t) * bundle.get(t)?.loss;
    }
    Ok(total)
}

/// Targets for one task over a batch; `None` marks a missing label.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskTargets {
    Classes(Vec<Option<usize>>),
    Values(Vec<Option<f64>>),
}

impl TaskTargets {
    pub fn len(&self) -> usize {
        match self {
            TaskTargets::Classes(v) => v.len(),
            TaskTargets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> TaskTargets {
        match self {
            TaskTargets::Classes(v) => TaskTargets::Classes(rows.iter().map(|&r| v[r]).collect()),
            TaskTargets::Values(v) => TaskTargets::Values(rows.iter().map(|&r| v[r]).collect()),
        }
    }

    pub fn valid_count(&self) -> usize {
        match self {
            TaskTargets::Classes(v) => v.iter().filter(|x| x.is_some()).count(),
            TaskTargets::Values(v) => v.iter().filter(|x| x.is_some()).count(),
        }
    }
}

/// Loss chosen for a classification head in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    /// Binary cross-entropy when the task has two classes, smoothed
    /// cross-entropy otherwise.
    #[default]
    Auto,
    SmoothedCe,
    Bce,
    /// Regress the class index scaled to `[0, 1]`.
    Mse,
}

/// Loss choice per classification head; regression heads always use MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossAssignment {
    pub subtlety: LossChoice,
    pub state: LossChoice,
    pub z: LossChoice,
    pub diagnosis: LossChoice,
}

impl Default for LossAssignment {
    fn default() -> Self {
        LossAssignment {
            subtlety: LossChoice::SmoothedCe,
            state: LossChoice::Auto,
            z: LossChoice::SmoothedCe,
            diagnosis: LossChoice::SmoothedCe,
        }
    }
}

impl LossAssignment {
    pub fn choice(&self, task: Task) -> Option<LossChoice> {
        match task {
            Task::Subtlety => Some(self.subtlety),
            Task::State => Some(self.state),
            Task::Z => Some(self.z),
            Task::Diagnosis => Some(self.diagnosis),
            _ => None,
        }
    }

    /// Head specs given the number of classes observed for each task.
    pub fn resolve(&self, num_classes: impl Fn(Task) -> usize) -> Result<TaskMap<HeadSpec>> {
        TaskMap::from_fn(|t| t).try_map(|_, &t| {
            let Some(choice) = self.choice(t) else {
                return Ok(HeadSpec::regression());
            };
            let c = num_classes(t);
            if c < 2 {
                return Err(Error::invalid(format!(
                    "task `{t}` has {c} observed class(es); at least 2 are required"
                )));
            }
            let loss = match choice {
                LossChoice::Auto if c == 2 => LossKind::Bce,
                LossChoice::Auto | LossChoice::SmoothedCe => LossKind::SmoothedCe,
                LossChoice::Bce if c == 2 => LossKind::Bce,
                LossChoice::Bce => {
                    return Err(Error::invalid(format!("task `{t}` has {c} classes; bce needs exactly 2")))
                }
                LossChoice::Mse => LossKind::Mse,
            };
            Ok(HeadSpec::classification(c, loss))
        })
    }
}

/// Settings shared by every classification head's smoothed cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingSettings {
    pub alpha: f64,
    pub form: SmoothingForm,
}

impl Default for SmoothingSettings {
    fn default() -> Self {
        SmoothingSettings {
            alpha: 0.1,
            form: SmoothingForm::Standard,
        }
    }
}

/// Evaluates each head's assigned loss against its targets.
pub fn compute_losses(
    outputs: &TaskMap<Matrix>,
    targets: &TaskMap<TaskTargets>,
    heads: &TaskMap<HeadSpec>,
    smoothing: SmoothingSettings,
) -> Result<TaskLossBundle> {
    let mut bundle = TaskLossBundle::default();
    for task in Task::ALL {
        let out = &outputs[task];
        let spec = &heads[task];
        let loss = match (&targets[task], spec.kind, spec.loss) {
            (TaskTargets::Classes(cls), HeadKind::Classification { num_classes }, LossKind::SmoothedCe) => {
                let cfg = LabelSmoothingConfig::new(smoothing.alpha, num_classes)?.with_form(smoothing.form);
                label_smoothing_ce_masked(out, cls, &cfg)?
            }
            (TaskTargets::Classes(cls), HeadKind::Classification { .. }, LossKind::Bce) => {
                let t: Vec<Option<f64>> = cls.iter().map(|c| c.map(|c| c as f64)).collect();
                bce_with_logits_masked(out, &t)?
            }
            (TaskTargets::Classes(cls), HeadKind::Classification { num_classes }, LossKind::Mse) => {
                let scale = (num_classes - 1) as f64;
                let t: Vec<Option<f64>> = cls.iter().map(|c| c.map(|c| c as f64 / scale)).collect();
                mse_masked(out, &t)?
            }
            (TaskTargets::Values(vals), HeadKind::Regression, LossKind::Mse) => mse_masked(out, vals)?,
            _ => {
                return Err(Error::invalid(format!(
                    "targets for `{task}` do not match its head ({:?}, {:?})",
                    spec.kind, spec.loss
                )))
            }
        };
        bundle.insert(task, loss);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngState;
    use proptest::prelude::*;

    fn plain_ce(logits: &Matrix, targets: &[usize]) -> f64 {
        let p = softmax_rows(logits);
        targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -p.get(r, t).ln())
            .sum::<f64>()
            / targets.len() as f64
    }

    #[test]
    fn alpha_zero_is_plain_cross_entropy() {
        let mut rng = RngState::new(4);
        let logits = Matrix::new(6, 4, (0..24).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let targets = [0, 1, 2, 3, 1, 2];
        let cfg = LabelSmoothingConfig::new(0.0, 4).unwrap();
        let (loss, _) = label_smoothing_ce(&logits, &targets, &cfg).unwrap();
        assert!((loss - plain_ce(&logits, &targets)).abs() < 1e-12);
    }

    #[test]
    fn two_class_hand_example() {
        // logits ln(0.7), ln(0.3) give p = (0.7, 0.3)
        let logits = Matrix::row_vector(vec![0.7f64.ln(), 0.3f64.ln()]);
        let cfg = LabelSmoothingConfig::new(0.1, 2).unwrap();
        let q = cfg.target_distribution(0);
        assert!((q[0] - 0.95).abs() < 1e-15 && (q[1] - 0.05).abs() < 1e-15);
        let (loss, _) = label_smoothing_ce(&logits, &[0], &cfg).unwrap();
        let want = 0.95 * -(0.7f64.ln()) + 0.05 * -(0.3f64.ln());
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.39904).abs() < 1e-5);
    }

    #[test]
    fn uniform_logits_give_ln_c_for_every_alpha() {
        for c in 2..6 {
            for alpha in [0.0, 0.1, 0.5, 0.9] {
                let cfg = LabelSmoothingConfig::new(alpha, c).unwrap();
                let (loss, _) = label_smoothing_ce(&Matrix::zeros(3, c), &[0, 1, c - 1], &cfg).unwrap();
                assert!((loss - (c as f64).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_errors() {
        assert!(LabelSmoothingConfig::new(1.0, 3).is_err());
        assert!(LabelSmoothingConfig::new(-0.1, 3).is_err());
        assert!(LabelSmoothingConfig::new(0.1, 1).is_err());
        let cfg = LabelSmoothingConfig::new(0.1, 3).unwrap();
        assert!(label_smoothing_ce(&Matrix::zeros(1, 3), &[3], &cfg).is_err());
        assert!(label_smoothing_ce(&Matrix::zeros(1, 2), &[0], &cfg).is_err());
    }

    #[test]
    fn constant_offset_form_only_rescales_hard_gradient() {
        let logits = Matrix::row_vector(vec![0.2, -0.4, 1.1]);
        let hard = LabelSmoothingConfig::new(0.0, 3).unwrap();
        let cfg = LabelSmoothingConfig::new(0.2, 3)
            .unwrap()
            .with_form(SmoothingForm::ConstantOffset);
        let (l0, g0) = label_smoothing_ce(&logits, &[1], &hard).unwrap();
        let (l, g) = label_smoothing_ce(&logits, &[1], &cfg).unwrap();
        assert!((l - (0.8 * l0 - 0.2)).abs() < 1e-12);
        assert!(g.max_abs_diff(&g0.scale(0.8)).unwrap() < 1e-15);
    }

    #[test]
    fn smoothed_ce_gradient_matches_finite_differences() {
        let mut rng = RngState::new(21);
        let cfg = LabelSmoothingConfig::new(0.1, 4).unwrap();
        for _ in 0..5 {
            let logits = Matrix::new(5, 4, (0..20).map(|_| rng.uniform(-4.0, 4.0)).collect()).unwrap();
            let targets: Vec<usize> = (0..5).map(|_| rng.categorical(&[1.0; 4])).collect();
            let (_, grad) = label_smoothing_ce(&logits, &targets, &cfg).unwrap();
            let h = 1e-6;
            for i in 0..logits.len() {
                let mut p = logits.clone();
                p.as_mut_slice()[i] += h;
                let mut m = logits.clone();
                m.as_mut_slice()[i] -= h;
                let fd = (label_smoothing_ce(&p, &targets, &cfg).unwrap().0
                    - label_smoothing_ce(&m, &targets, &cfg).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grad.as_slice()[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn masked_rows_are_ignored() {
        let logits = Matrix::from_rows(&[[1.0, 0.0], [5.0, -5.0]]).unwrap();
        let cfg = LabelSmoothingConfig::new(0.1, 2).unwrap();
        let masked = label_smoothing_ce_masked(&logits, &[Some(1), None], &cfg).unwrap();
        let (single, _) = label_smoothing_ce(&logits.select_rows(&[0]), &[1], &cfg).unwrap();
        assert_eq!(masked.valid, 1);
        assert!((masked.loss - single).abs() < 1e-15);
        assert_eq!(masked.grad.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn mse_cases() {
        let p = Matrix::column(vec![1.0, 2.0]);
        assert_eq!(mse(&p, &p, None).unwrap().0, 0.0);
        let (loss, grad) = mse(&p, &Matrix::zeros(2, 1), None).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad.as_slice(), &[1.0, 2.0]);

        let (loss, grad) = mse(&p, &Matrix::zeros(2, 1), Some(&[false, false])).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));

        let (loss, grad) = mse(&p, &Matrix::zeros(2, 1), Some(&[false, true])).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.as_slice(), &[0.0, 4.0]);

        assert!(mse(&p, &Matrix::zeros(3, 1), None).is_err());
    }

    #[test]
    fn bce_cases() {
        let (l, g) = bce_with_logits(&Matrix::column(vec![0.0]), &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g.get(0, 0) + 0.5).abs() < 1e-15);

        let (l, _) = bce_with_logits(&Matrix::column(vec![1000.0]), &[1.0]).unwrap();
        assert!(l.is_finite() && l < 1e-300);
        let (l, _) = bce_with_logits(&Matrix::column(vec![-1000.0]), &[0.0]).unwrap();
        assert!(l.is_finite() && l < 1e-300);

        assert!(bce_with_logits(&Matrix::column(vec![0.0]), &[0.5]).is_err());
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut z = -30.0;
        while z <= 30.0 {
            for t in [0.0, 1.0] {
                // σ and 1 − σ as the two fractions of the definition; forming
                // 1 − σ by subtraction loses about e^z·ε for large z
                let e = (-z as f64).exp();
                let s = 1.0 / (1.0 + e);
                let not_s = e / (1.0 + e);
                let naive = -(t * s.ln() + (1.0 - t) * not_s.ln());
                let (l, _) = bce_with_logits(&Matrix::column(vec![z]), &[t]).unwrap();
                assert!((l - naive).abs() < 1e-10, "z={z} t={t}: {l} vs {naive}");
            }
            z += 0.25;
        }
    }

    #[test]
    fn total_loss_unit_weights() {
        let mut bundle = TaskLossBundle::default();
        for t in Task::ALL {
            bundle.insert(
                t,
                TaskLoss {
                    loss: (t.index() + 1) as f64,
                    grad: Matrix::zeros(1, 1),
                    valid: 1,
                },
            );
        }
        assert_eq!(total_loss(&bundle, &TaskWeights::default()).unwrap(), 28.0);

        let mut partial = bundle.clone();
        partial.entries[Task::Y] = None;
        let err = total_loss(&partial, &TaskWeights::default()).unwrap_err();
        assert!(err.to_string().contains("`y`"));
    }

    #[test]
    fn task_weights_reject_negative() {
        let mut m = TaskMap::splat(1.0);
        m[Task::Z] = -1.0;
        assert!(TaskWeights::new(m).is_err());
        assert!(serde_json::from_str::<TaskWeights>(r#"{"subtlety":1}"#).is_err());
    }

    #[test]
    fn loss_assignment_resolution() {
        let classes = |t: Task| match t {
            Task::State => 2,
            Task::Z => 4,
            _ => 3,
        };
        let heads = LossAssignment::default().resolve(classes).unwrap();
        assert_eq!(heads[Task::State].loss, LossKind::Bce);
        assert_eq!(heads[Task::State].output_width(), 1);
        assert_eq!(heads[Task::Z].loss, LossKind::SmoothedCe);
        assert_eq!(heads[Task::Z].output_width(), 4);
        assert_eq!(heads[Task::Size].loss, LossKind::Mse);

        let three_state = |t: Task| if t == Task::State { 3 } else { 2 };
        let heads = LossAssignment::default().resolve(three_state).unwrap();
        assert_eq!(heads[Task::State].loss, LossKind::SmoothedCe);

        let forced = LossAssignment { state: LossChoice::Bce, ..Default::default() };
        assert!(forced.resolve(three_state).is_err());
        let as_mse = LossAssignment { state: LossChoice::Mse, ..Default::default() };
        assert_eq!(as_mse.resolve(three_state).unwrap()[Task::State].output_width(), 1);
        assert!(LossAssignment::default().resolve(|_| 1).is_err());
    }

    proptest! {
        #[test]
        fn smoothed_targets_sum_to_one(alpha in 0.0f64..1.0, c in 2usize..12, class in 0usize..12) {
            let cfg = LabelSmoothingConfig::new(alpha, c).unwrap();
            let q = cfg.target_distribution(class % c);
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn mse_value_is_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 1..6), b_seed in any::<u64>()) {
            let mut rng = RngState::new(b_seed);
            let b: Vec<f64> = a.iter().map(|_| rng.uniform(-10.0, 10.0)).collect();
            let pa = Matrix::column(a);
            let pb = Matrix::column(b);
            let (l1, g1) = mse(&pa, &pb, None).unwrap();
            let (l2, g2) = mse(&pb, &pa, None).unwrap();
            prop_assert_eq!(l1, l2);
            prop_assert!(g1.add(&g2).unwrap().as_slice().iter().all(|v| v.abs() < 1e-12));
        }

        #[test]
        fn bce_label_flip_symmetry(z in -40.0f64..40.0) {
            let (a, _) = bce_with_logits(&Matrix::column(vec![z]), &[1.0]).unwrap();
            let (b, _) = bce_with_logits(&Matrix::column(vec![-z]), &[0.0]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn total_loss_is_linear_in_each_weight(
            losses in proptest::collection::vec(0.0f64..10.0, 7),
            lambdas in proptest::collection::vec(0.0f64..3.0, 7),
            k in 0usize..7,
            bump in 0.0f64..5.0,
        ) {
            let mut bundle = TaskLossBundle::default();
            for t in Task::ALL {
                bundle.insert(t, TaskLoss { loss: losses[t.index()], grad: Matrix::zeros(1, 1), valid: 1 });
            }
            let base = TaskMap::from_fn(|t| lambdas[t.index()]);
            let mut bumped = base.clone();
            bumped[Task::ALL[k]] += bump;
            let l0 = total_loss(&bundle, &TaskWeights::new(base).unwrap()).unwrap();
            let l1 = total_loss(&bundle, &TaskWeights::new(bumped).unwrap()).unwrap();
            prop_assert!((l1 - l0 - bump * losses[k]).abs() <= 1e-12);
        }
    }
}
