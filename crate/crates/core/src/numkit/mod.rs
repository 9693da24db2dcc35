//! Dense numeric core: matrices, softmax cross-entropy, reverse-mode
//! gradients for the MLP, and SGD with momentum.

mod backprop;
mod loss;
mod matrix;
mod optim;

pub use backprop::{forward_backward, ForwardBackward};
pub use loss::{ce_logit_gradient, cross_entropy, softmax, PROB_FLOOR};
pub(crate) use loss::softmax_into;
pub use matrix::Matrix;
pub use optim::{GradientSet, OptimizerState};
pub(crate) use optim::update_slice;
