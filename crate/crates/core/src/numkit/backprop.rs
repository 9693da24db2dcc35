//! Reverse-mode gradients for the fixed MLP topology.

use crate::error::{Error, Result};
use crate::model::{relu_in_place, ModelParams};
use crate::numkit::loss::{softmax_into, PROB_FLOOR};
use crate::numkit::{GradientSet, Matrix};

/// Output of one forward/backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    /// Batch mean of the cross-entropy loss.
    pub loss: f64,
    /// Gradients over θ in [`ModelParams::params`] order.
    pub grads: GradientSet,
    /// Gradient of the mean loss with respect to the additive logit offset
    /// (`rows × C`). Equal to `(softmax(z) - onehot(y)) / rows`.
    pub offset_grad: Matrix,
}

/// Mean softmax cross-entropy of `model(batch) + offset` and its exact
/// gradients. Without an offset this is the plain ERM batch loss.
pub fn forward_backward(
    model: &ModelParams,
    batch: &Matrix,
    labels: &[usize],
    offset: Option<&Matrix>,
) -> Result<ForwardBackward> {
    let n = batch.rows();
    let classes = model.num_classes();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "batch has {n} rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if let Some(off) = offset {
        if off.shape() != (n, classes) {
            return Err(Error::invalid(format!(
                "offset shape {}x{} does not match {n}x{classes}",
                off.rows(),
                off.cols()
            )));
        }
    }
    if batch.cols() != model.input_dim() {
        return Err(Error::invalid(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            model.input_dim()
        )));
    }

    // Forward, keeping every layer input and pre-activation.
    let layers = model.layers();
    let last = layers.len() - 1;
    let mut inputs: Vec<Matrix> = Vec::with_capacity(layers.len());
    let mut pre_acts: Vec<Matrix> = Vec::with_capacity(layers.len());
    let mut h = batch.clone();
    for (i, layer) in layers.iter().enumerate() {
        let mut z = h.matmul(&layer.weight)?;
        z.add_row_broadcast(&layer.bias)?;
        inputs.push(h);
        if i < last {
            let mut a = z.clone();
            relu_in_place(&mut a);
            pre_acts.push(z);
            h = a;
        } else {
            h = z;
        }
    }
    let mut logits = h;
    if let Some(off) = offset {
        logits.add_assign(off)?;
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }

    let inv_n = 1.0 / n as f64;
    let mut dz = Matrix::zeros(n, classes);
    let mut loss_sum = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let out = dz.row_mut(r);
        softmax_into(logits.row(r), out);
        loss_sum -= out[y].max(PROB_FLOOR).ln();
        out[y] -= 1.0;
        for v in out.iter_mut() {
            *v *= inv_n;
        }
    }
    let loss = loss_sum * inv_n;
    let offset_grad = dz.clone();

    // Backward.
    let mut grads = vec![Matrix::zeros(0, 0); 2 * layers.len()];
    for i in (0..layers.len()).rev() {
        grads[2 * i] = inputs[i].t_matmul(&dz)?;
        grads[2 * i + 1] = dz.column_sums();
        if i > 0 {
            let mut dh = dz.matmul_t(&layers[i].weight)?;
            let z_prev = &pre_acts[i - 1];
            for (g, &z) in dh.values_mut().iter_mut().zip(z_prev.values()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            dz = dh;
        }
    }

    Ok(ForwardBackward {
        loss,
        grads: GradientSet::new(grads),
        offset_grad,
    })
}
