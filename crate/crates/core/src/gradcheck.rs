//! Finite-difference verification of the analytic backward pass.
//!
//! For each seed a small network and batch are drawn, the full weighted
//! multi-task loss is differentiated analytically, and every parameter entry
//! is compared against a central difference of that same scalar.

use serde::Serialize;

use crate::error::Result;
use crate::losses::{compute_losses, total_loss, LossAssignment, SmoothingSettings, TaskTargets, TaskWeights};
use crate::network::{MultiTaskNet, NetConfig};
use crate::numcore::{Matrix, RngState};
use crate::task::{Task, TaskMap};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub abs_floor: f64,
    pub smoothing: SmoothingSettings,
    pub assignment: LossAssignment,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seeds: vec![1, 2, 3],
            samples: 6,
            input_dim: 8,
            hidden: 10,
            num_classes: 3,
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-8,
            smoothing: SmoothingSettings::default(),
            assignment: LossAssignment::default(),
        }
    }
}

/// A toy problem: network, batch, targets and task weights.
#[derive(Debug, Clone)]
pub struct Problem {
    pub net: MultiTaskNet,
    pub batch: Matrix,
    pub targets: TaskMap<TaskTargets>,
    pub weights: TaskWeights,
    pub smoothing: SmoothingSettings,
}

impl Problem {
    /// Seeded problem. The last row has its `size` target masked so the
    /// masking path is covered as well.
    pub fn seeded(cfg: &GradCheckConfig, seed: u64) -> Result<Problem> {
        let mut rng = RngState::new(seed);
        let heads = cfg.assignment.resolve(|_| cfg.num_classes)?;
        let net_cfg = NetConfig {
            input_dim: cfg.input_dim,
            hidden: cfg.hidden,
            dropout_rate: 0.0,
            dropout_in_residual: false,
            heads,
        };
        let mut net = MultiTaskNet::new(net_cfg, &mut rng)?;
        // non-zero biases so every bias gradient path is exercised
        for p in net.parameters_mut() {
            if p.rows() == 1 {
                p.as_mut_slice().iter_mut().for_each(|v| *v = rng.normal(0.0, 0.1));
            }
        }
        let n = cfg.samples;
        let batch = Matrix::new(n, cfg.input_dim, (0..n * cfg.input_dim).map(|_| rng.standard_normal()).collect())?;
        let targets = TaskMap::from_fn(|t| {
            if t.is_classification() {
                TaskTargets::Classes((0..n).map(|_| Some(rng.categorical(&vec![1.0; cfg.num_classes]))).collect())
            } else {
                TaskTargets::Values(
                    (0..n)
                        .map(|i| (t != Task::Size || i + 1 < n).then(|| rng.unit()))
                        .collect(),
                )
            }
        });
        let weights = TaskWeights::new(TaskMap::from_fn(|_| rng.uniform(0.5, 1.5)))?;
        Ok(Problem {
            net,
            batch,
            targets,
            weights,
            smoothing: cfg.smoothing,
        })
    }

    /// Weighted total loss with dropout off.
    pub fn loss(&self, net: &MultiTaskNet) -> Result<f64> {
        let (out, _) = net.forward_eval(&self.batch)?;
        let bundle = compute_losses(&out, &self.targets, net.head_specs(), self.smoothing)?;
        total_loss(&bundle, &self.weights)
    }

    /// Analytic gradients of [`Problem::loss`] in parameter order.
    pub fn analytic(&self, net: &MultiTaskNet) -> Result<Vec<Matrix>> {
        let (out, cache) = net.forward_eval(&self.batch)?;
        let bundle = compute_losses(&out, &self.targets, net.head_specs(), self.smoothing)?;
        let grads = net.backward(&cache, &bundle.weighted_grads(&self.weights)?)?;
        Ok(grads.params)
    }

    /// Central differences of [`Problem::loss`] for every parameter entry.
    pub fn numeric(&self, step: f64) -> Result<Vec<Matrix>> {
        let mut net = self.net.clone();
        let shapes: Vec<_> = net.parameters().iter().map(|p| p.value.shape()).collect();
        let mut out = Vec::with_capacity(shapes.len());
        for (k, &(r, c)) in shapes.iter().enumerate() {
            let mut g = Matrix::zeros(r, c);
            for i in 0..r * c {
                let orig = net.parameters()[k].value.as_slice()[i];
                net.parameters_mut()[k].as_mut_slice()[i] = orig + step;
                let plus = self.loss(&net)?;
                net.parameters_mut()[k].as_mut_slice()[i] = orig - step;
                let minus = self.loss(&net)?;
                net.parameters_mut()[k].as_mut_slice()[i] = orig;
                g.as_mut_slice()[i] = (plus - minus) / (2.0 * step);
            }
            out.push(g);
        }
        Ok(out)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub params: Vec<ParamError>,
}

impl SeedReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub seeds: Vec<SeedReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.seeds.iter().map(SeedReport::max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    /// `(seed, parameter, flat index)` of the largest error.
    pub fn worst(&self) -> Option<(u64, &ParamError)> {
        self.seeds
            .iter()
            .flat_map(|s| s.params.iter().map(move |p| (s.seed, p)))
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
    }

    /// Largest error per parameter tensor across seeds.
    pub fn per_layer(&self) -> Vec<(String, f64)> {
        let Some(first) = self.seeds.first() else {
            return Vec::new();
        };
        first
            .params
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let worst = self.seeds.iter().map(|s| s.params[k].max_rel_error).fold(0.0, f64::max);
                (p.name.clone(), worst)
            })
            .collect()
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<24} {:>14}\n", "parameter", "max rel error");
        for (name, err) in self.per_layer() {
            out.push_str(&format!("{name:<24} {err:>14.3e}\n"));
        }
        out.push_str(&format!(
            "overall max relative error {:.3e} (tolerance {:.0e}): {}\n",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Negative control: the analytic gradient with the trunk weight gradient
/// halved, as a broken backward pass would produce.
pub fn corrupted_analytic(problem: &Problem, net: &MultiTaskNet) -> Result<Vec<Matrix>> {
    let mut g = problem.analytic(net)?;
    g[0].scale_in_place(0.5);
    Ok(g)
}

pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    gradient_check_with(cfg, |problem, net| problem.analytic(net))
}

/// Like [`gradient_check`] but with a caller-supplied analytic gradient, so a
/// broken backward can be fed in as a negative control.
pub fn gradient_check_with(
    cfg: &GradCheckConfig,
    analytic: impl Fn(&Problem, &MultiTaskNet) -> Result<Vec<Matrix>>,
) -> Result<GradCheckReport> {
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let problem = Problem::seeded(cfg, seed)?;
        let a = analytic(&problem, &problem.net)?;
        let n = problem.numeric(cfg.step)?;
        let names = problem.net.parameter_names();
        let params = names
            .into_iter()
            .zip(a.iter().zip(&n))
            .map(|(name, (a, n))| {
                let (worst_index, max_rel_error) = a
                    .as_slice()
                    .iter()
                    .zip(n.as_slice())
                    .map(|(&x, &y)| relative_error(x, y, cfg.abs_floor))
                    .enumerate()
                    .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
                ParamError {
                    name,
                    max_rel_error,
                    worst_index,
                }
            })
            .collect();
        seeds.push(SeedReport { seed, params });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossChoice;

    #[test]
    fn default_check_passes() {
        let report = gradient_check(&GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "{}", report.render_table());
        assert_eq!(report.per_layer().len(), 20);
    }

    #[test]
    fn binary_state_with_bce_passes() {
        let cfg = GradCheckConfig {
            num_classes: 2,
            ..Default::default()
        };
        let report = gradient_check(&cfg).unwrap();
        assert!(report.passed(), "{}", report.render_table());
    }

    #[test]
    fn class_index_regression_passes() {
        let cfg = GradCheckConfig {
            assignment: LossAssignment {
                state: LossChoice::Mse,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(gradient_check(&cfg).unwrap().passed());
    }

    #[test]
    fn corrupted_backward_fails() {
        let cfg = GradCheckConfig::default();
        let report = gradient_check_with(&cfg, corrupted_analytic).unwrap();
        assert!(!report.passed());
        let (_, worst) = report.worst().unwrap();
        assert_eq!(worst.name, "trunk.weight");
        assert!((worst.max_rel_error - 0.5).abs() < 1e-3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
    }
}
