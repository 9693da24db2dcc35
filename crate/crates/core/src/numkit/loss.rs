//! Softmax cross-entropy, the only loss used in this crate.

use crate::error::{Error, Result};

/// Smallest probability fed to `ln` so confident mistakes stay finite.
pub const PROB_FLOOR: f64 = 1e-300;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite values"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

/// Unchecked softmax into a caller buffer; inputs must be finite.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `-ln(probs[label])`, with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(logits), label)` with respect to the
/// logits: `softmax(logits) - onehot(label)`.
pub fn ce_logit_gradient(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    let mut p = softmax(logits)?;
    if label >= p.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            p.len()
        )));
    }
    p[label] -= 1.0;
    Ok(p)
}
