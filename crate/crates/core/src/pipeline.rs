//! Two-stage orchestration: Stage 1 → error set → μ-fold upsampling →
//! Stage 2 (continued or fresh) → epoch selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::auxvar::{run_stage1, AuxBank};
use crate::config::{Criterion, ExperimentConfig, RunConfig, Stage2Mode};
use crate::data::{Example, SplitDataset, TrainingData};
use crate::error::{Error, Result};
use crate::kv::{join, KvDoc};
use crate::metrics::{class_report, group_report};
use crate::model::ModelParams;
use crate::numkit::{forward_backward, softmax_into, Matrix, OptimizerState, PROB_FLOOR};
use crate::rng::{stream, Stream};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// Sorted, de-duplicated training indices misclassified by the biased model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ErrorSet(Vec<usize>);

impl ErrorSet {
    pub fn from_indices(mut indices: Vec<usize>, n_train: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.last() {
            if i >= n_train {
                return Err(Error::invalid(format!("error-set index {i} out of range")));
            }
        }
        Ok(ErrorSet(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

/// `{ i : argmax f(x_i) ≠ y_i }` with the bare model (no auxiliary offsets).
pub fn build_error_set(model: &ModelParams, data: &TrainingData) -> Result<ErrorSet> {
    if model.num_classes() != data.num_classes() {
        return Err(Error::invalid(format!(
            "model has {} outputs for {} classes",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let preds = model.predict_labels(data.features())?;
    let wrong = preds
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter(|(_, (p, y))| p != y)
        .map(|(i, _)| i)
        .collect();
    Ok(ErrorSet(wrong))
}

/// Index multiset with each error-set member repeated `mu` times and every
/// other example once, in ascending index order.
pub fn upsample(n_train: usize, errors: &ErrorSet, mu: usize) -> Result<Vec<usize>> {
    if mu == 0 {
        return Err(Error::invalid("mu must be at least 1"));
    }
    if errors.0.last().is_some_and(|&i| i >= n_train) {
        return Err(Error::invalid("error set does not fit the training set"));
    }
    let mut out = Vec::with_capacity(n_train + (mu - 1) * errors.len());
    for i in 0..n_train {
        let k = if errors.contains(i) { mu } else { 1 };
        out.extend(std::iter::repeat_n(i, k));
    }
    Ok(out)
}

/// Which split an evaluation record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "validation" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// An evaluation split. Attributes are present only when every example in
/// the split is annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub kind: SplitKind,
    features: Matrix,
    labels: Vec<usize>,
    attributes: Option<Vec<usize>>,
    num_classes: usize,
    num_attributes: usize,
}

impl EvalSplit {
    pub fn from_examples(
        kind: SplitKind,
        examples: &[Example],
        num_classes: usize,
        num_attributes: usize,
    ) -> Result<Self> {
        let data = TrainingData::from_examples(examples, num_classes)?;
        let attributes: Option<Vec<usize>> = examples.iter().map(Example::attribute).collect();
        Ok(EvalSplit {
            kind,
            features: data.features().clone(),
            labels: data.labels().to_vec(),
            attributes,
            num_classes,
            num_attributes,
        })
    }

    pub fn has_groups(&self) -> bool {
        self.attributes.is_some()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Evaluation snapshot of one split after one Stage-2 epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: SplitKind,
    pub class_accuracies: Vec<f64>,
    /// Empty when the split carries no group labels.
    pub group_accuracies: Vec<f64>,
    pub class_diff: f64,
    pub worst_group_accuracy: Option<f64>,
    pub average_accuracy: f64,
    pub mean_loss: f64,
}

/// Evaluates `model` on `split`.
pub fn evaluate(model: &ModelParams, split: &EvalSplit, epoch: usize) -> Result<EpochRecord> {
    let logits = model.predict_logits(&split.features)?;
    let c = logits.cols();
    let mut probs = vec![0.0; c];
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(split.len());
    for (r, &y) in split.labels.iter().enumerate() {
        let row = logits.row(r);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logits at epoch {epoch}")));
        }
        softmax_into(row, &mut probs);
        loss -= probs[y].max(PROB_FLOOR).ln();
        preds.push(crate::model::argmax(row));
    }
    let mean_loss = loss / split.len().max(1) as f64;
    match &split.attributes {
        Some(attrs) => {
            let r = group_report(&preds, &split.labels, attrs, split.num_classes, split.num_attributes)?;
            Ok(EpochRecord {
                epoch,
                split: split.kind,
                class_accuracies: r.class_accuracies,
                group_accuracies: r.group_accuracies,
                class_diff: r.class_diff,
                worst_group_accuracy: Some(r.worst_group_accuracy),
                average_accuracy: r.average_accuracy,
                mean_loss,
            })
        }
        None => {
            let r = class_report(&preds, &split.labels, split.num_classes)?;
            Ok(EpochRecord {
                epoch,
                split: split.kind,
                class_accuracies: r.class_accuracies,
                group_accuracies: Vec::new(),
                class_diff: r.class_diff,
                worst_group_accuracy: None,
                average_accuracy: r.average_accuracy,
                mean_loss,
            })
        }
    }
}

/// Optimizer settings for one plain training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

/// One ERM epoch over a shuffled copy of `multiset`; returns the mean loss.
pub fn erm_epoch(
    model: &mut ModelParams,
    data: &TrainingData,
    multiset: &[usize],
    batch_size: usize,
    opt: &mut OptimizerState,
    rng: &mut impl Rng,
) -> Result<f64> {
    if multiset.is_empty() {
        return Err(Error::invalid("empty training multiset"));
    }
    let mut order = multiset.to_vec();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let fb = forward_backward(model, &x, &y, None)?;
        opt.step(&mut model.params_mut(), &fb.grads)?;
        total += fb.loss * chunk.len() as f64;
    }
    Ok(total / order.len() as f64)
}

/// Plain ERM for `epochs` epochs; returns the per-epoch mean losses.
pub fn train_erm(
    model: &mut ModelParams,
    data: &TrainingData,
    multiset: &[usize],
    epochs: usize,
    settings: SgdSettings,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut opt = OptimizerState::new(
        settings.learning_rate,
        settings.momentum,
        settings.weight_decay,
        &model.params(),
    )?;
    (0..epochs)
        .map(|_| erm_epoch(model, data, multiset, settings.batch_size, &mut opt, rng))
        .collect()
}

/// Output of Stage 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Output {
    pub model: ModelParams,
    /// Epoch 0 (the starting model) through `stage2_epochs`, one record per
    /// evaluated split per epoch.
    pub records: Vec<EpochRecord>,
    pub train_losses: Vec<f64>,
}

/// Rebalanced training over `multiset`, evaluating every split in `evals`
/// before the first epoch and after each epoch. Velocity starts at zero.
pub fn run_stage2(
    init_model: ModelParams,
    data: &TrainingData,
    multiset: &[usize],
    config: &RunConfig,
    evals: &[&EvalSplit],
) -> Result<Stage2Output> {
    let mut model = init_model;
    let mut opt = OptimizerState::new(
        config.learning_rate,
        config.momentum,
        config.weight_decay_stage2,
        &model.params(),
    )?;
    let mut rng = stream(config.seed, Stream::Stage2Shuffle);
    let mut records = Vec::new();
    for e in evals {
        records.push(evaluate(&model, e, 0)?);
    }
    let mut train_losses = Vec::with_capacity(config.stage2_epochs);
    for epoch in 1..=config.stage2_epochs {
        let loss = erm_epoch(&mut model, data, multiset, config.batch_size, &mut opt, &mut rng)
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("stage 2 epoch {epoch}: {m}")),
                other => other,
            })?;
        train_losses.push(loss);
        for e in evals {
            records.push(evaluate(&model, e, epoch)?);
        }
    }
    Ok(Stage2Output {
        model,
        records,
        train_losses,
    })
}

/// Chosen epoch and whether the class-difference smoothing had to fall back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub epoch: usize,
    pub fallback: bool,
}

/// Picks a Stage-2 epoch from the validation records only (records of any
/// other split are ignored).
///
/// * `WorstGroupVal`: highest worst-group accuracy, earliest on ties.
/// * `ClassDiff`: lowest class difference among epochs whose class
///   difference moved by at most `smoothing_threshold` from the preceding
///   epoch; earliest on ties. If every epoch is discarded, falls back to
///   the unsmoothed minimum.
pub fn select_epoch(records: &[EpochRecord], criterion: Criterion, smoothing_threshold: f64) -> Result<Selection> {
    let mut val: Vec<&EpochRecord> = records
        .iter()
        .filter(|r| r.split == SplitKind::Validation)
        .collect();
    if val.is_empty() {
        return Err(Error::invalid("no validation records to select from"));
    }
    val.sort_by_key(|r| r.epoch);
    match criterion {
        Criterion::WorstGroupVal => {
            let mut best: Option<(usize, f64)> = None;
            for r in &val {
                let wg = r.worst_group_accuracy.ok_or_else(|| {
                    Error::Config("worst_group_val selection needs group-annotated validation data".into())
                })?;
                if best.is_none_or(|(_, b)| wg > b) {
                    best = Some((r.epoch, wg));
                }
            }
            Ok(Selection {
                epoch: best.unwrap().0,
                fallback: false,
            })
        }
        Criterion::ClassDiff => {
            let argmin = |cands: &[&EpochRecord]| -> Option<usize> {
                let mut best: Option<&EpochRecord> = None;
                for r in cands {
                    if best.is_none_or(|b| r.class_diff < b.class_diff) {
                        best = Some(r);
                    }
                }
                best.map(|r| r.epoch)
            };
            let kept: Vec<&EpochRecord> = val
                .iter()
                .enumerate()
                .filter(|(i, r)| *i == 0 || (r.class_diff - val[i - 1].class_diff).abs() <= smoothing_threshold)
                .map(|(_, r)| *r)
                .collect();
            match argmin(&kept) {
                Some(epoch) => Ok(Selection { epoch, fallback: false }),
                None => Ok(Selection {
                    epoch: argmin(&val).unwrap(),
                    fallback: true,
                }),
            }
        }
    }
}

/// Everything a run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub selected_epoch: usize,
    pub selection_fallback: bool,
    pub error_set_size: usize,
    pub n_train: usize,
    pub stage1_losses: Vec<f64>,
    pub stage2_losses: Vec<f64>,
    /// Validation and test records for every Stage-2 epoch.
    pub trajectory: Vec<EpochRecord>,
}

impl RunSummary {
    pub fn record(&self, split: SplitKind, epoch: usize) -> Option<&EpochRecord> {
        self.trajectory
            .iter()
            .find(|r| r.split == split && r.epoch == epoch)
    }

    pub fn records(&self, split: SplitKind) -> impl Iterator<Item = &EpochRecord> {
        self.trajectory.iter().filter(move |r| r.split == split)
    }

    /// Test record at the selected epoch.
    pub fn selected_test(&self) -> &EpochRecord {
        self.record(SplitKind::Test, self.selected_epoch)
            .expect("selected epoch is always in the trajectory")
    }

    pub fn test_worst_group_accuracy(&self) -> Option<f64> {
        self.selected_test().worst_group_accuracy
    }

    pub fn test_average_accuracy(&self) -> f64 {
        self.selected_test().average_accuracy
    }

    /// Structured text: key/value header, then an `[epochs]` CSV table.
    pub fn render(&self) -> String {
        let t = self.selected_test();
        let mut doc = KvDoc::default();
        doc.push("format_version", SUMMARY_FORMAT_VERSION);
        doc.push("selected_epoch", self.selected_epoch);
        doc.push("criterion", self.config.run.criterion);
        doc.push("selection_fallback", self.selection_fallback);
        doc.push("error_set_size", self.error_set_size);
        doc.push("n_train", self.n_train);
        doc.push("test_average_accuracy", t.average_accuracy);
        doc.push(
            "test_worst_group_accuracy",
            t.worst_group_accuracy.map(|v| v.to_string()).unwrap_or_default(),
        );
        doc.push("test_class_diff", t.class_diff);
        doc.push("test_class_accuracies", join(&t.class_accuracies));
        doc.push("test_group_accuracies", join(&t.group_accuracies));
        doc.push("stage1_losses", join(&self.stage1_losses));
        doc.push("stage2_losses", join(&self.stage2_losses));
        for (k, v) in self.config.to_kv().iter() {
            doc.push(format!("config.{k}"), v);
        }
        let mut out = String::from("# run summary\n");
        out.push_str(&doc.render());
        out.push_str("\n[epochs]\n");
        out.push_str(&render_epochs_csv(&self.trajectory));
        out
    }
}

/// `epoch,split,class_0_acc…,group_0_acc…,class_diff,worst_group_acc,mean_loss`.
/// Group columns are empty for splits without group labels.
pub fn render_epochs_csv(records: &[EpochRecord]) -> String {
    let classes = records.iter().map(|r| r.class_accuracies.len()).max().unwrap_or(0);
    let groups = records.iter().map(|r| r.group_accuracies.len()).max().unwrap_or(0);
    let mut out = String::from("epoch,split");
    for c in 0..classes {
        let _ = write!(out, ",class_{c}_acc");
    }
    for g in 0..groups {
        let _ = write!(out, ",group_{g}_acc");
    }
    out.push_str(",class_diff,worst_group_acc,mean_loss\n");
    for r in records {
        let _ = write!(out, "{},{}", r.epoch, r.split.as_str());
        for c in 0..classes {
            let _ = write!(out, ",{}", r.class_accuracies.get(c).map(f64::to_string).unwrap_or_default());
        }
        for g in 0..groups {
            let _ = write!(out, ",{}", r.group_accuracies.get(g).map(f64::to_string).unwrap_or_default());
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            r.class_diff,
            r.worst_group_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            r.mean_loss
        );
    }
    out
}

/// A full run plus the intermediate artifacts the CLI persists.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: RunSummary,
    /// θ̂_bias (the initial model when Stage 1 is skipped).
    pub biased_model: ModelParams,
    /// `None` when Stage 1 was skipped.
    pub aux: Option<AuxBank>,
    pub error_set: ErrorSet,
    pub final_model: ModelParams,
}

/// Stage-2 inputs shared by a whole split dataset.
pub struct PreparedData {
    pub train: TrainingData,
    pub validation: EvalSplit,
    pub test: EvalSplit,
}

impl PreparedData {
    pub fn new(split: &SplitDataset) -> Result<Self> {
        let (c, a) = (split.num_classes(), split.num_attributes());
        Ok(PreparedData {
            train: split.train_data()?,
            validation: EvalSplit::from_examples(SplitKind::Validation, &split.validation, c, a)?,
            test: EvalSplit::from_examples(SplitKind::Test, &split.test, c, a)?,
        })
    }
}

/// Stage 1 only: returns θ̂_bias and the bank (or the untouched initial
/// model and `None` when `stage1_epochs == 0`).
pub fn stage1_for(config: &RunConfig, train: &TrainingData) -> Result<(ModelParams, Option<AuxBank>, Vec<f64>)> {
    let dims = config.layer_dims(train.feature_dim(), train.num_classes());
    let init = ModelParams::init_with_rng(&dims, config.seed, &mut stream(config.seed, Stream::Init))?;
    if config.stage1_epochs == 0 {
        return Ok((init, None, Vec::new()));
    }
    let out = run_stage1(init, train, config)?;
    Ok((out.model, Some(out.aux), out.epoch_losses))
}

/// Stage 2 and selection from a given θ̂_bias and error set. This is the
/// only way Stage 1 influences the result.
pub fn stage2_from(
    biased_model: &ModelParams,
    error_set: &ErrorSet,
    config: &RunConfig,
    data: &PreparedData,
) -> Result<(Stage2Output, Selection)> {
    let multiset = upsample(data.train.len(), error_set, config.mu)?;
    let start = match config.mode {
        Stage2Mode::OneM => biased_model.clone(),
        Stage2Mode::TwoM => ModelParams::init_with_rng(
            biased_model.layer_dims(),
            config.seed,
            &mut stream(config.seed, Stream::Stage2Init),
        )?,
    };
    let out = run_stage2(start, &data.train, &multiset, config, &[&data.validation, &data.test])
        .map_err(|e| e.in_stage("stage 2"))?;
    // the epoch-0 snapshot is the starting point, not a Stage-2 outcome
    let trained: Vec<EpochRecord> = out.records.iter().filter(|r| r.epoch > 0).cloned().collect();
    let sel = select_epoch(&trained, config.criterion, config.classdiff_smoothing_threshold)
        .map_err(|e| e.in_stage("selection"))?;
    Ok((out, sel))
}

/// The full two-stage run on an already split dataset.
pub fn run_experiment_detailed(config: &ExperimentConfig, split: &SplitDataset) -> Result<ExperimentOutput> {
    let run = &config.run;
    run.validate()?;
    let data = PreparedData::new(split).map_err(|e| e.in_stage("data"))?;
    if data.validation.is_empty() || data.test.is_empty() {
        return Err(Error::invalid("validation and test splits must be non-empty"));
    }
    if run.criterion == Criterion::WorstGroupVal && !data.validation.has_groups() {
        return Err(Error::Config(
            "criterion worst_group_val needs group-annotated validation data; use class_diff".into(),
        ));
    }
    let (biased_model, aux, stage1_losses) =
        stage1_for(run, &data.train).map_err(|e| e.in_stage("stage 1"))?;
    let error_set = build_error_set(&biased_model, &data.train).map_err(|e| e.in_stage("error set"))?;
    let (s2, sel) = stage2_from(&biased_model, &error_set, run, &data)?;
    let summary = RunSummary {
        config: config.clone(),
        selected_epoch: sel.epoch,
        selection_fallback: sel.fallback,
        error_set_size: error_set.len(),
        n_train: data.train.len(),
        stage1_losses,
        stage2_losses: s2.train_losses,
        trajectory: s2.records,
    };
    Ok(ExperimentOutput {
        summary,
        biased_model,
        aux,
        error_set,
        final_model: s2.model,
    })
}

pub fn run_experiment(config: &ExperimentConfig, split: &SplitDataset) -> Result<RunSummary> {
    run_experiment_detailed(config, split).map(|o| o.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

    fn rec(epoch: usize, split: SplitKind, cd: f64, wg: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            split,
            class_accuracies: vec![0.5, 0.5],
            group_accuracies: vec![wg; 4],
            class_diff: cd,
            worst_group_accuracy: Some(wg),
            average_accuracy: 0.5,
            mean_loss: 1.0,
        }
    }

    #[test]
    fn upsample_counts() {
        let e = ErrorSet::from_indices(vec![1, 4, 7], 10).unwrap();
        let m = upsample(10, &e, 4).unwrap();
        assert_eq!(m.len(), 19);
        assert_eq!(m.iter().filter(|&&i| i == 4).count(), 4);
        assert_eq!(m.iter().filter(|&&i| i == 5).count(), 1);
        assert_eq!(upsample(10, &e, 1).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(upsample(10, &e, 0).is_err());
        assert!(upsample(5, &e, 2).is_err());
    }

    #[test]
    fn perfect_model_has_empty_error_set() {
        // logits = x, so predicting label = argmax(x) is perfect on one-hot rows
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let m = ModelParams::from_layers(vec![Layer { weight: w, bias: Matrix::zeros(1, 2) }], 0).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]]).unwrap();
        let d = TrainingData::new(x, vec![0, 1, 0], 2).unwrap();
        assert!(build_error_set(&m, &d).unwrap().is_empty());
    }

    #[test]
    fn constant_model_errors_are_the_other_class() {
        // zero weights: every logit ties, argmax → class 0
        let m = ModelParams::from_layers(
            vec![Layer { weight: Matrix::zeros(1, 2), bias: Matrix::zeros(1, 2) }],
            0,
        )
        .unwrap();
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i % 10 == 3)).collect();
        let d = TrainingData::new(Matrix::zeros(20, 1), labels, 2).unwrap();
        assert_eq!(build_error_set(&m, &d).unwrap().indices(), &[3, 13]);
    }

    #[test]
    fn random_model_error_set_matches_loop() {
        let m = ModelParams::init(&[3, 5, 2], 21).unwrap();
        let mut rng = stream(2, Stream::Data);
        let x = Matrix::from_vec(20, 3, (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..20).map(|_| rng.random_range(0..2)).collect();
        let d = TrainingData::new(x.clone(), y.clone(), 2).unwrap();
        let mut want = Vec::new();
        for i in 0..20 {
            let row = x.select_rows(&[i]);
            let z = m.predict_logits(&row).unwrap();
            let pred = if z.get(0, 1) > z.get(0, 0) { 1 } else { 0 };
            if pred != y[i] {
                want.push(i);
            }
        }
        assert_eq!(build_error_set(&m, &d).unwrap().indices(), want.as_slice());
    }

    #[test]
    fn select_single_epoch() {
        let r = [rec(0, SplitKind::Validation, 0.3, 0.4)];
        for c in [Criterion::WorstGroupVal, Criterion::ClassDiff] {
            assert_eq!(select_epoch(&r, c, 0.1).unwrap().epoch, 0);
        }
    }

    #[test]
    fn smoothing_discards_abrupt_changes() {
        // jumps: 0.05 (kept), 0.35 and 0.36 (discarded) → epoch 2
        let cds = [0.10, 0.05, 0.40, 0.04];
        let r: Vec<_> = cds
            .iter()
            .enumerate()
            .map(|(i, &cd)| rec(i + 1, SplitKind::Validation, cd, 0.5))
            .collect();
        assert_eq!(
            select_epoch(&r, Criterion::ClassDiff, 0.10).unwrap(),
            Selection { epoch: 2, fallback: false }
        );

        // every move from epoch 1 exceeds 0.10, so only epoch 1 survives
        let cds = [0.30, 0.05, 0.40, 0.04];
        let r: Vec<_> = cds
            .iter()
            .enumerate()
            .map(|(i, &cd)| rec(i + 1, SplitKind::Validation, cd, 0.5))
            .collect();
        assert_eq!(select_epoch(&r, Criterion::ClassDiff, 0.10).unwrap().epoch, 1);
        // without smoothing the raw minimum wins
        assert_eq!(select_epoch(&r, Criterion::ClassDiff, 1.0).unwrap().epoch, 4);
    }

    #[test]
    fn worst_group_selection_ignores_test_records() {
        let mut r: Vec<_> = (0..5)
            .map(|e| rec(e, SplitKind::Validation, 0.1, 0.1 * e as f64))
            .collect();
        r.push(rec(1, SplitKind::Test, 0.0, 1.0));
        assert_eq!(select_epoch(&r, Criterion::WorstGroupVal, 0.1).unwrap().epoch, 4);
        // earliest on ties
        let r: Vec<_> = [0.2, 0.7, 0.7, 0.1]
            .iter()
            .enumerate()
            .map(|(e, &w)| rec(e, SplitKind::Validation, 0.1, w))
            .collect();
        assert_eq!(select_epoch(&r, Criterion::WorstGroupVal, 0.1).unwrap().epoch, 1);
        assert!(select_epoch(&[rec(0, SplitKind::Test, 0.1, 0.1)], Criterion::ClassDiff, 0.1).is_err());
    }

    #[test]
    fn epochs_csv_layout() {
        let mut r = rec(3, SplitKind::Validation, 0.25, 0.5);
        r.group_accuracies = vec![1.0, 0.5, 0.75, 1.0];
        r.class_accuracies = vec![0.9, 0.65];
        let mut v = rec(3, SplitKind::Test, 0.0, 0.0);
        v.group_accuracies.clear();
        v.worst_group_accuracy = None;
        assert_eq!(
            render_epochs_csv(&[r, v]),
            "epoch,split,class_0_acc,class_1_acc,group_0_acc,group_1_acc,group_2_acc,group_3_acc,class_diff,worst_group_acc,mean_loss\n\
             3,validation,0.9,0.65,1,0.5,0.75,1,0.25,0.5,1\n\
             3,test,0.5,0.5,,,,,0,,1\n"
        );
    }
}
