//! Group-aware evaluation: per-group and per-class accuracy, worst-group
//! accuracy, the class-difference statistic, and rank correlation.

use crate::error::{Error, Result};

/// Accuracy breakdown over the `C × A` groups of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    /// Indexed by group id `y·A + a`.
    pub group_accuracies: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub class_accuracies: Vec<f64>,
    pub average_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub class_diff: f64,
}

impl GroupReport {
    /// Index of the group attaining the worst accuracy (lowest id on ties).
    pub fn worst_group(&self) -> usize {
        let mut best = 0;
        for (g, &a) in self.group_accuracies.iter().enumerate() {
            if a < self.group_accuracies[best] {
                best = g;
            }
        }
        best
    }
}

/// Per-class breakdown, computable without any attribute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_accuracies: Vec<f64>,
    pub class_sizes: Vec<usize>,
    pub average_accuracy: f64,
    pub class_diff: f64,
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    Ok(())
}

/// Counts per-class accuracy. Every class must be present.
pub fn class_report(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassReport> {
    check_lengths(predictions, labels)?;
    let mut correct = vec![0usize; num_classes];
    let mut sizes = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        sizes[y] += 1;
        correct[y] += usize::from(p == y);
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("class {c} has no examples")));
    }
    let class_accuracies: Vec<f64> = correct
        .iter()
        .zip(&sizes)
        .map(|(&c, &s)| c as f64 / s as f64)
        .collect();
    Ok(ClassReport {
        class_diff: class_diff(&class_accuracies)?,
        average_accuracy: correct.iter().sum::<usize>() as f64 / labels.len() as f64,
        class_accuracies,
        class_sizes: sizes,
    })
}

/// Full group breakdown. Every one of the `C × A` groups must be non-empty.
pub fn group_report(
    predictions: &[usize],
    labels: &[usize],
    attributes: &[usize],
    num_classes: usize,
    num_attributes: usize,
) -> Result<GroupReport> {
    check_lengths(predictions, labels)?;
    if attributes.len() != labels.len() {
        return Err(Error::invalid("attributes and labels differ in length"));
    }
    let groups = num_classes * num_attributes;
    let mut correct = vec![0usize; groups];
    let mut sizes = vec![0usize; groups];
    for ((&p, &y), &a) in predictions.iter().zip(labels).zip(attributes) {
        if y >= num_classes || a >= num_attributes {
            return Err(Error::invalid(format!("label {y} / attribute {a} out of range")));
        }
        let g = y * num_attributes + a;
        sizes[g] += 1;
        correct[g] += usize::from(p == y);
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!(
            "group {g} (class {}, attribute {}) has no examples",
            g / num_attributes,
            g % num_attributes
        )));
    }
    let group_accuracies: Vec<f64> = correct
        .iter()
        .zip(&sizes)
        .map(|(&c, &s)| c as f64 / s as f64)
        .collect();
    let class_accuracies: Vec<f64> = (0..num_classes)
        .map(|c| {
            let r = c * num_attributes..(c + 1) * num_attributes;
            correct[r.clone()].iter().sum::<usize>() as f64 / sizes[r].iter().sum::<usize>() as f64
        })
        .collect();
    Ok(GroupReport {
        worst_group_accuracy: group_accuracies.iter().copied().fold(f64::INFINITY, f64::min),
        average_accuracy: correct.iter().sum::<usize>() as f64 / labels.len() as f64,
        class_diff: class_diff(&class_accuracies)?,
        group_accuracies,
        group_sizes: sizes,
        class_accuracies,
    })
}

/// Mean absolute difference over all unordered pairs of class accuracies.
pub fn class_diff(class_accuracies: &[f64]) -> Result<f64> {
    let c = class_accuracies.len();
    if c < 2 {
        return Err(Error::invalid(format!("class_diff needs at least 2 classes, got {c}")));
    }
    let mut total = 0.0;
    for i in 0..c {
        for j in i + 1..c {
            total += (class_accuracies[i] - class_accuracies[j]).abs();
        }
    }
    Ok(total / (c * (c - 1) / 2) as f64)
}

/// Checks the bound "all group accuracies within `epsilon` of each other
/// implies class_diff ≤ `epsilon`" on one configuration. Groups are given
/// per class; class accuracy is the size-weighted mean of its groups.
/// Returns `true` whenever the premise fails.
pub fn check_claim1(group_accuracies: &[Vec<f64>], group_sizes: &[Vec<usize>], epsilon: f64) -> bool {
    let all: Vec<f64> = group_accuracies.iter().flatten().copied().collect();
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    if hi - lo > epsilon {
        return true;
    }
    let class_acc: Vec<f64> = group_accuracies
        .iter()
        .zip(group_sizes)
        .map(|(accs, sizes)| {
            let n: usize = sizes.iter().sum();
            accs.iter()
                .zip(sizes)
                .map(|(&a, &s)| a * s as f64)
                .sum::<f64>()
                / n.max(1) as f64
        })
        .collect();
    match class_diff(&class_acc) {
        Ok(d) => d <= epsilon + 1e-12,
        Err(_) => true,
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks on ties. `Ok(None)` flags an
/// undefined coefficient (a constant series).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::invalid("spearman needs at least 3 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman input contains non-finite values"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}
