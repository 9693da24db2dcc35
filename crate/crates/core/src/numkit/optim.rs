//! SGD with heavy-ball momentum and ℓ2 weight decay folded into the step.

use std::ops::Index;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// One gradient matrix per parameter matrix, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(Vec<Matrix>);

impl GradientSet {
    pub fn new(grads: Vec<Matrix>) -> Self {
        GradientSet(grads)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<Matrix> {
        self.0
    }
}

impl Index<usize> for GradientSet {
    type Output = Matrix;

    fn index(&self, i: usize) -> &Matrix {
        &self.0[i]
    }
}

/// Hyperparameters and velocity buffers of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Matrix>,
}

impl OptimizerState {
    /// Zero velocity shaped like `params`.
    pub fn new(
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
        params: &[&Matrix],
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    /// `v ← momentum·v + (g + wd·p)`, then `p ← p − lr·v`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &GradientSet) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), v)) in params.iter().zip(grads.iter()).zip(&self.velocity).enumerate() {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::invalid(format!("shape mismatch at tensor {i}")));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.velocity) {
            update_slice(
                p.values_mut(),
                g.values(),
                v.values_mut(),
                self.learning_rate,
                self.momentum,
                self.weight_decay,
            );
        }
        Ok(())
    }
}

/// Applies the momentum update element-wise to matching slices.
pub(crate) fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
}
