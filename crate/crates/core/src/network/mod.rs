//! Shared residual trunk with seven task heads.
//!
//! ```text
//! x ─ dense ─ relu ─ dropout ─ h0 ─┬─ dense ─ relu ─ dense ─ F ─(+)─ y ─┬─ head[subtlety]
//!                                  └────────────────────────────┘      ├─ ...
//!                                                                      └─ head[size]
//! ```
//!
//! Heads emit raw logits (classification) or raw values (regression); the
//! losses module owns the softmax/sigmoid.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::numcore::{dropout_mask, he_init, relu, relu_backward, Matrix, RngState};
use crate::task::{Task, TaskMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification { num_classes: usize },
    Regression,
}

/// What a head predicts and how it is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub loss: LossKind,
}

impl HeadSpec {
    pub fn classification(num_classes: usize, loss: LossKind) -> Self {
        HeadSpec {
            kind: HeadKind::Classification { num_classes },
            loss,
        }
    }

    pub fn regression() -> Self {
        HeadSpec {
            kind: HeadKind::Regression,
            loss: LossKind::Mse,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.kind {
            HeadKind::Classification { num_classes } => Some(num_classes),
            HeadKind::Regression => None,
        }
    }

    /// Width of the head's output layer.
    pub fn output_width(&self) -> usize {
        match (self.kind, self.loss) {
            (HeadKind::Classification { num_classes }, LossKind::SmoothedCe) => num_classes,
            _ => 1,
        }
    }

    fn validate(&self, task: Task) -> Result<()> {
        match (task.is_classification(), self.kind, self.loss) {
            (true, HeadKind::Classification { num_classes }, _) if num_classes < 2 => Err(Error::invalid(
                format!("head `{task}` needs at least 2 classes, got {num_classes}"),
            )),
            (true, HeadKind::Classification { num_classes }, LossKind::Bce) if num_classes != 2 => {
                Err(Error::invalid(format!(
                    "head `{task}` uses binary cross-entropy but has {num_classes} classes"
                )))
            }
            (true, HeadKind::Classification { .. }, _) => Ok(()),
            (false, HeadKind::Regression, LossKind::Mse) => Ok(()),
            _ => Err(Error::invalid(format!(
                "head `{task}` cannot be {:?} trained with {:?}",
                self.kind, self.loss
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    /// Also apply dropout between the two dense layers of the residual branch.
    #[serde(default)]
    pub dropout_in_residual: bool,
    pub heads: TaskMap<HeadSpec>,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!(
                "network dims must be positive (input {}, hidden {})",
                self.input_dim, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        for (t, h) in self.heads.iter() {
            h.validate(t)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in_dim × out_dim`
    pub weights: Matrix,
    /// `1 × out_dim`
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        DenseLayer {
            weights: he_init(in_dim, out_dim, rng),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weights)?.add_row(&self.bias)
    }

    /// Returns `(dW, db, dx)` for upstream gradient `dout`.
    fn backward(&self, x: &Matrix, dout: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let dw = x.t_matmul(dout)?;
        let db = dout.sum_rows();
        let dx = dout.matmul_t(&self.weights)?;
        Ok((dw, db, dx))
    }

    fn zero(&mut self) {
        self.weights = Matrix::zeros(self.in_dim(), self.out_dim());
        self.bias = Matrix::zeros(1, self.out_dim());
    }
}

/// `y = F(x) + x` with `F = dense ∘ relu ∘ dense`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: DenseLayer,
    pub second: DenseLayer,
}

impl ResidualBlock {
    pub fn new(width: usize, rng: &mut RngState) -> Self {
        ResidualBlock {
            first: DenseLayer::new(width, width, rng),
            second: DenseLayer::new(width, width, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.first.in_dim()
    }

    /// Deterministic forward (no dropout inside the branch).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let branch = self.second.forward(&relu(&self.first.forward(x)?))?;
        branch.add(x)
    }

    /// Zeroes the branch so the block becomes the identity map.
    pub fn zero_branch(&mut self) {
        self.first.zero();
        self.second.zero();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub task: Task,
    pub spec: HeadSpec,
    pub layer: DenseLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    pub trunk_pre: Matrix,
    pub trunk_mask: Option<Matrix>,
    /// Residual block input `h0`.
    pub block_input: Matrix,
    pub inner_pre: Matrix,
    pub inner_mask: Option<Matrix>,
    /// Input to the second dense layer of the branch.
    pub inner_act: Matrix,
    /// Residual block output `y`, shared by every head.
    pub features: Matrix,
}

/// Gradients in parameter order, plus the gradients at the residual block
/// input and at the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub params: Vec<Matrix>,
    pub block_input: Matrix,
    pub input: Matrix,
}

#[derive(Debug, Clone)]
pub struct ParamView<'a> {
    pub name: String,
    pub value: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskNet {
    config: NetConfig,
    pub trunk: DenseLayer,
    pub block: ResidualBlock,
    pub heads: TaskMap<TaskHead>,
}

impl MultiTaskNet {
    /// He-initialized weights, zero biases. Draw order: trunk, residual
    /// first, residual second, then heads in canonical task order.
    pub fn new(config: NetConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let trunk = DenseLayer::new(config.input_dim, config.hidden, rng);
        let block = ResidualBlock::new(config.hidden, rng);
        let heads = TaskMap::from_fn(|task| {
            let spec = config.heads[task];
            TaskHead {
                task,
                spec,
                layer: DenseLayer::new(config.hidden, spec.output_width(), rng),
            }
        });
        Ok(MultiTaskNet {
            config,
            trunk,
            block,
            heads,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn head_specs(&self) -> &TaskMap<HeadSpec> {
        &self.config.heads
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.config.dropout_rate = rate;
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix, mode: Mode, rng: &mut RngState) -> Result<(TaskMap<Matrix>, ForwardCache)> {
        match mode {
            Mode::Train => self.forward_impl(batch, Some(rng)),
            Mode::Eval => self.forward_impl(batch, None),
        }
    }

    /// Eval-mode forward; no randomness involved.
    pub fn forward_eval(&self, batch: &Matrix) -> Result<(TaskMap<Matrix>, ForwardCache)> {
        self.forward_impl(batch, None)
    }

    fn forward_impl(&self, batch: &Matrix, mut rng: Option<&mut RngState>) -> Result<(TaskMap<Matrix>, ForwardCache)> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Incompatible(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.config.input_dim
            )));
        }
        let rate = self.config.dropout_rate;
        let mut draw_mask = |rows: usize, cols: usize| -> Result<Option<Matrix>> {
            match rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => dropout_mask(rows, cols, rate, rng).map(Some),
                _ => Ok(None),
            }
        };

        let trunk_pre = self.trunk.forward(batch)?;
        let trunk_act = relu(&trunk_pre);
        let trunk_mask = draw_mask(trunk_act.rows(), trunk_act.cols())?;
        let block_input = match &trunk_mask {
            Some(m) => trunk_act.hadamard(m)?,
            None => trunk_act,
        };

        let inner_pre = self.block.first.forward(&block_input)?;
        let inner_relu = relu(&inner_pre);
        let inner_mask = if self.config.dropout_in_residual {
            draw_mask(inner_relu.rows(), inner_relu.cols())?
        } else {
            None
        };
        let inner_act = match &inner_mask {
            Some(m) => inner_relu.hadamard(m)?,
            None => inner_relu,
        };
        let features = self.block.second.forward(&inner_act)?.add(&block_input)?;

        let outputs = self.heads.try_map(|_, head| head.layer.forward(&features))?;
        let cache = ForwardCache {
            input: batch.clone(),
            trunk_pre,
            trunk_mask,
            block_input,
            inner_pre,
            inner_mask,
            inner_act,
            features,
        };
        Ok((outputs, cache))
    }

    /// Exact gradients of `Σ_k <head_grads[k], output_k>` with respect to
    /// every parameter, given the cache of the matching forward pass.
    pub fn backward(&self, cache: &ForwardCache, head_grads: &TaskMap<Matrix>) -> Result<ParamGrads> {
        let n = cache.features.rows();
        let mut head_param_grads = Vec::with_capacity(14);
        let mut dfeatures = Matrix::zeros(n, self.config.hidden);
        for (task, head) in self.heads.iter() {
            let g = &head_grads[task];
            if g.shape() != (n, head.layer.out_dim()) {
                return Err(Error::shape("backward head gradient", g.shape(), (n, head.layer.out_dim())));
            }
            let (dw, db, dx) = head.layer.backward(&cache.features, g)?;
            head_param_grads.push(dw);
            head_param_grads.push(db);
            dfeatures.add_assign(&dx)?;
        }

        // residual branch
        let (dw2, db2, mut dinner) = self.block.second.backward(&cache.inner_act, &dfeatures)?;
        if let Some(m) = &cache.inner_mask {
            dinner = dinner.hadamard(m)?;
        }
        let dinner_pre = relu_backward(&cache.inner_pre, &dinner)?;
        let (dw1, db1, dbranch_in) = self.block.first.backward(&cache.block_input, &dinner_pre)?;
        // skip path contributes the identity
        let dblock_input = dbranch_in.add(&dfeatures)?;

        let mut dtrunk = dblock_input.clone();
        if let Some(m) = &cache.trunk_mask {
            dtrunk = dtrunk.hadamard(m)?;
        }
        let dtrunk_pre = relu_backward(&cache.trunk_pre, &dtrunk)?;
        let (dw0, db0, dinput) = self.trunk.backward(&cache.input, &dtrunk_pre)?;

        let mut params = vec![dw0, db0, dw1, db1, dw2, db2];
        params.extend(head_param_grads);
        Ok(ParamGrads {
            params,
            block_input: dblock_input,
            input: dinput,
        })
    }

    /// Parameter names in canonical order: trunk, residual first, residual
    /// second, then each head in task order; weight before bias.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["trunk", "residual.0", "residual.1"]
            .iter()
            .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
            .collect();
        for t in Task::ALL {
            names.push(format!("head.{t}.weight"));
            names.push(format!("head.{t}.bias"));
        }
        names
    }

    pub fn parameters(&self) -> Vec<ParamView<'_>> {
        let mut values: Vec<&Matrix> = vec![
            &self.trunk.weights,
            &self.trunk.bias,
            &self.block.first.weights,
            &self.block.first.bias,
            &self.block.second.weights,
            &self.block.second.bias,
        ];
        for head in self.heads.values() {
            values.push(&head.layer.weights);
            values.push(&head.layer.bias);
        }
        self.parameter_names()
            .into_iter()
            .zip(values)
            .map(|(name, value)| ParamView { name, value })
            .collect()
    }

    /// Mutable parameters in the same order as [`MultiTaskNet::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![
            &mut self.trunk.weights,
            &mut self.trunk.bias,
            &mut self.block.first.weights,
            &mut self.block.first.bias,
            &mut self.block.second.weights,
            &mut self.block.second.bias,
        ];
        for (_, head) in self.heads.iter_mut() {
            out.push(&mut head.layer.weights);
            out.push(&mut head.layer.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .iter()
            .flat_map(|p| p.value.as_slice().iter().copied())
            .collect()
    }
}
