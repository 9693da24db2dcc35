//! Stage 1: bias amplification with per-example auxiliary logits.
//!
//! Each training example `i` owns a learnable vector `b_i ∈ R^C`. During
//! Stage 1 the loss of example `i` is `ℓ(f_θ(x_i) + λ·b_i, y_i)`, and θ and
//! the bank `B` are updated together. Examples the network finds hard get
//! fitted through their `b_i` instead, so the network itself leans further
//! on the easy (spurious) signal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::data::TrainingData;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numkit::{forward_backward, update_slice, Matrix, OptimizerState};
use crate::rng::{stream, Stream};

/// The bank `B` of auxiliary variables, one row per training example.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxBank {
    values: Matrix,
    lambda: f64,
}

impl AuxBank {
    /// All-zero bank for `n_train` examples and `num_classes` logits.
    pub fn zeros(n_train: usize, num_classes: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(AuxBank {
            values: Matrix::zeros(n_train, num_classes),
            lambda,
        })
    }

    /// Bank with given contents, one row per training example.
    pub fn from_values(values: Matrix, lambda: f64) -> Result<Self> {
        let mut bank = AuxBank::zeros(0, values.cols(), lambda)?;
        bank.values = values;
        Ok(bank)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// `λ·b_i` for each requested row.
    pub fn scaled_rows(&self, indices: &[usize]) -> Matrix {
        let mut m = self.values.select_rows(indices);
        m.scale(self.lambda);
        m
    }

    /// Writes `example_index,group_id,b_0,...,b_{C-1}`; `example_index` is
    /// the row in the training split and `group_id` is empty when unknown.
    pub fn write_csv(&self, path: &Path, groups: &[Option<usize>]) -> Result<()> {
        if groups.len() != self.len() {
            return Err(Error::invalid("group list length differs from bank size"));
        }
        let mut out = String::from("example_index,group_id");
        for c in 0..self.values.cols() {
            let _ = write!(out, ",b_{c}");
        }
        out.push('\n');
        for (i, g) in groups.iter().enumerate() {
            let _ = write!(out, "{i},{}", g.map(|g| g.to_string()).unwrap_or_default());
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Momentum SGD over rows of the bank. Velocity is kept per row and only
/// touched rows are updated, so rows outside a batch never move.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxOptimizer {
    learning_rate: f64,
    momentum: f64,
    velocity: Matrix,
}

impl AuxOptimizer {
    pub fn new(learning_rate: f64, momentum: f64, bank: &AuxBank) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("aux learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(AuxOptimizer {
            learning_rate,
            momentum,
            velocity: Matrix::zeros(bank.values.rows(), bank.values.cols()),
        })
    }

    fn step_rows(&mut self, bank: &mut AuxBank, grads: &BTreeMap<usize, Vec<f64>>) {
        for (&i, g) in grads {
            update_slice(
                bank.values.row_mut(i),
                g,
                self.velocity.row_mut(i),
                self.learning_rate,
                self.momentum,
                0.0,
            );
        }
    }
}

/// Gradients of one Stage-1 batch, before any update is applied.
#[derive(Debug, Clone)]
pub struct Stage1Gradients {
    pub loss: f64,
    pub theta: crate::numkit::GradientSet,
    /// `∂loss/∂b_i` per distinct batch row; duplicates are summed.
    pub aux: BTreeMap<usize, Vec<f64>>,
}

/// Computes the Stage-1 batch loss and its gradients without updating.
pub fn stage1_gradients(
    model: &ModelParams,
    aux: &AuxBank,
    batch_indices: &[usize],
    data: &TrainingData,
) -> Result<Stage1Gradients> {
    if aux.len() != data.len() {
        return Err(Error::invalid(format!(
            "aux bank has {} rows for {} training examples",
            aux.len(),
            data.len()
        )));
    }
    if let Some(&i) = batch_indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!(
            "batch index {i} out of range for {} training examples",
            data.len()
        )));
    }
    let (x, y) = data.batch(batch_indices);
    let offset = aux.scaled_rows(batch_indices);
    let fb = forward_backward(model, &x, &y, Some(&offset))?;
    let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (r, &i) in batch_indices.iter().enumerate() {
        let g = grads.entry(i).or_insert_with(|| vec![0.0; aux.values.cols()]);
        for (acc, &d) in g.iter_mut().zip(fb.offset_grad.row(r)) {
            *acc += aux.lambda * d;
        }
    }
    Ok(Stage1Gradients {
        loss: fb.loss,
        theta: fb.grads,
        aux: grads,
    })
}

/// One joint update of θ and the touched rows of `B` on the batch loss
/// `mean ℓ(f_θ(x_i) + λ·b_i, y_i)`. Returns that loss.
pub fn stage1_batch(
    model: &mut ModelParams,
    aux: &mut AuxBank,
    batch_indices: &[usize],
    data: &TrainingData,
    theta_opt: &mut OptimizerState,
    aux_opt: &mut AuxOptimizer,
) -> Result<f64> {
    let g = stage1_gradients(model, aux, batch_indices, data)?;
    if g.aux.values().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite auxiliary gradient".into()));
    }
    theta_opt.step(&mut model.params_mut(), &g.theta)?;
    aux_opt.step_rows(aux, &g.aux);
    Ok(g.loss)
}

/// Result of Stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    /// θ̂_bias, to be used without the bank from here on.
    pub model: ModelParams,
    pub aux: AuxBank,
    /// Mean training loss (including the auxiliary offsets) per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Runs `config.stage1_epochs` epochs of joint (θ, B) training.
pub fn run_stage1(model: ModelParams, data: &TrainingData, config: &RunConfig) -> Result<Stage1Output> {
    run_stage1_observed(model, data, config, |_, _, _| {})
}

/// Like [`run_stage1`], calling `observe(epoch, model, bank)` after each
/// epoch (1-based). Used for analysis dumps; the observer cannot influence
/// training.
pub fn run_stage1_observed(
    mut model: ModelParams,
    data: &TrainingData,
    config: &RunConfig,
    mut observe: impl FnMut(usize, &ModelParams, &AuxBank),
) -> Result<Stage1Output> {
    if config.stage1_epochs == 0 {
        return Err(Error::invalid("stage 1 needs at least one epoch"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if model.num_classes() != data.num_classes() {
        return Err(Error::invalid(format!(
            "model has {} outputs for {} classes",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let mut aux = AuxBank::zeros(data.len(), data.num_classes(), config.lambda)?;
    let mut theta_opt = OptimizerState::new(
        config.learning_rate,
        config.momentum,
        config.weight_decay_stage1,
        &model.params(),
    )?;
    let mut aux_opt = AuxOptimizer::new(config.aux_lr(), config.momentum, &aux)?;
    let mut rng = stream(config.seed, Stream::Stage1Shuffle);
    let mut epoch_losses = Vec::with_capacity(config.stage1_epochs);
    for epoch in 1..=config.stage1_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let loss = stage1_batch(&mut model, &mut aux, chunk, data, &mut theta_opt, &mut aux_opt)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("stage 1 epoch {epoch}: {m}")),
                    other => other,
                })?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / data.len() as f64);
        observe(epoch, &model, &aux);
    }
    Ok(Stage1Output {
        model,
        aux,
        epoch_losses,
    })
}

/// Auxiliary-variable summary for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSeparation {
    pub group: usize,
    pub count: usize,
    /// Mean of `b_i[y_i]`.
    pub mean_true_logit: f64,
    /// Mean over examples of the average `b_i[c]`, `c ≠ y_i`.
    pub mean_other_logit: f64,
    /// Mean of `‖b_i‖₂`.
    pub mean_norm: f64,
}

/// Per-group statistics of a learned bank; analysis only.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationStats {
    pub groups: Vec<GroupSeparation>,
    /// Groups in `0..num_groups` with no training examples.
    pub omitted: Vec<usize>,
}

impl SeparationStats {
    pub fn get(&self, group: usize) -> Option<&GroupSeparation> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Group-wise means of the bank. `labels` and `groups` are per training row.
pub fn separation_stats(
    aux: &AuxBank,
    labels: &[usize],
    groups: &[usize],
    num_groups: usize,
) -> Result<SeparationStats> {
    if labels.len() != aux.len() || groups.len() != aux.len() {
        return Err(Error::invalid("labels/groups must have one entry per bank row"));
    }
    let c = aux.values.cols();
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); num_groups];
    for (i, (&y, &g)) in labels.iter().zip(groups).enumerate() {
        if g >= num_groups || y >= c {
            return Err(Error::invalid(format!("row {i}: group {g} / label {y} out of range")));
        }
        let b = aux.row(i);
        let other = if c > 1 {
            (b.iter().sum::<f64>() - b[y]) / (c - 1) as f64
        } else {
            0.0
        };
        let e = &mut acc[g];
        e.0 += 1;
        e.1 += b[y];
        e.2 += other;
        e.3 += b.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let mut stats = SeparationStats {
        groups: Vec::new(),
        omitted: Vec::new(),
    };
    for (g, (n, t, o, norm)) in acc.into_iter().enumerate() {
        if n == 0 {
            stats.omitted.push(g);
            continue;
        }
        let n_f = n as f64;
        stats.groups.push(GroupSeparation {
            group: g,
            count: n,
            mean_true_logit: t / n_f,
            mean_other_logit: o / n_f,
            mean_norm: norm / n_f,
        });
    }
    Ok(stats)
}
