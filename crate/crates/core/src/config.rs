//! Run settings and the flat `key = value` experiment config file.
//!
//! ```text
//! format_version = 1
//! seed = 0
//! lambda = 20
//! stage1_epochs = 4
//! mu = 10
//! ...
//! ```
//!
//! Unknown keys are rejected. Every key except `format_version` has a
//! default (the standard synthetic benchmark).

use std::fmt;
use std::path::Path;

use crate::data::{DatasetSpec, Generator};
use crate::error::{Error, Result};
use crate::kv::{join, parse_list, parse_num, KvDoc};
use crate::model::DEFAULT_HIDDEN;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// How Stage 2 obtains its starting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage2Mode {
    /// Continue from the Stage-1 parameters.
    OneM,
    /// Start a fresh, separately seeded model.
    TwoM,
}

impl Stage2Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage2Mode::OneM => "one_m",
            Stage2Mode::TwoM => "two_m",
        }
    }

    /// Accepts both `one_m` and `one-m` spellings.
    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "one_m" => Ok(Stage2Mode::OneM),
            "two_m" => Ok(Stage2Mode::TwoM),
            _ => Err(Error::Config(format!("unknown mode `{s}` (one_m | two_m)"))),
        }
    }
}

impl fmt::Display for Stage2Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Epoch-selection rule applied to Stage-2 validation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Highest validation worst-group accuracy; needs group labels.
    WorstGroupVal,
    /// Lowest validation class difference; needs only class labels.
    ClassDiff,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::WorstGroupVal => "worst_group_val",
            Criterion::ClassDiff => "class_diff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "worst_group_val" => Ok(Criterion::WorstGroupVal),
            "class_diff" => Ok(Criterion::ClassDiff),
            _ => Err(Error::Config(format!(
                "unknown criterion `{s}` (worst_group_val | class_diff)"
            ))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters of one two-stage run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Auxiliary-variable coefficient λ.
    pub lambda: f64,
    /// Stage-1 epochs T. Zero skips Stage 1 entirely.
    pub stage1_epochs: usize,
    /// Upweight factor μ.
    pub mu: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    /// Step size for the auxiliary bank; `None` reuses `learning_rate`.
    pub aux_learning_rate: Option<f64>,
    pub momentum: f64,
    pub weight_decay_stage1: f64,
    pub weight_decay_stage2: f64,
    pub batch_size: usize,
    pub mode: Stage2Mode,
    pub criterion: Criterion,
    pub classdiff_smoothing_threshold: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda: 20.0,
            stage1_epochs: 4,
            mu: 10,
            stage2_epochs: 16,
            learning_rate: 0.01,
            aux_learning_rate: Some(0.05),
            momentum: 0.9,
            weight_decay_stage1: 0.0,
            weight_decay_stage2: 0.05,
            batch_size: 32,
            mode: Stage2Mode::OneM,
            criterion: Criterion::WorstGroupVal,
            classdiff_smoothing_threshold: 0.10,
            seed: 0,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl RunConfig {
    /// Plain ERM: no Stage 1, no upweighting, a single fresh model.
    pub fn erm(&self) -> RunConfig {
        RunConfig {
            lambda: 0.0,
            stage1_epochs: 0,
            mu: 1,
            mode: Stage2Mode::TwoM,
            ..self.clone()
        }
    }

    /// JTT: an ERM identification model for `stage1_epochs`, then a fresh
    /// model on the upsampled set.
    pub fn jtt(&self) -> RunConfig {
        RunConfig {
            lambda: 0.0,
            mode: Stage2Mode::TwoM,
            ..self.clone()
        }
    }

    pub fn aux_lr(&self) -> f64 {
        self.aux_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn layer_dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(num_classes);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.mu < 1 {
            return bad("mu must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.stage2_epochs == 0 {
            return bad("stage2_epochs must be at least 1".into());
        }
        for (k, v) in [
            ("learning_rate", self.learning_rate),
            ("aux_learning_rate", self.aux_lr()),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for (k, v) in [
            ("weight_decay_stage1", self.weight_decay_stage1),
            ("weight_decay_stage2", self.weight_decay_stage2),
            ("classdiff_smoothing_threshold", self.classdiff_smoothing_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be positive".into());
        }
        Ok(())
    }
}

/// Dataset plus run settings: the contents of one config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::spurious_benchmark(10_000, 0.1, 0),
            run: RunConfig::default(),
        }
    }
}

const DATASET_KEYS: [&str; 10] = [
    "generator",
    "n_total",
    "num_classes",
    "num_attributes",
    "class_proportions",
    "group_proportions",
    "core_noise",
    "spurious_noise",
    "core_dim",
    "spurious_dim",
];

const RUN_KEYS: [&str; 15] = [
    "lambda",
    "stage1_epochs",
    "mu",
    "stage2_epochs",
    "learning_rate",
    "aux_learning_rate",
    "momentum",
    "weight_decay_stage1",
    "weight_decay_stage2",
    "batch_size",
    "mode",
    "criterion",
    "classdiff_smoothing_threshold",
    "hidden_dims",
    "seed",
];

impl ExperimentConfig {
    pub fn is_known_key(key: &str) -> bool {
        key == "format_version" || DATASET_KEYS.contains(&key) || RUN_KEYS.contains(&key)
    }

    pub fn read(path: &Path) -> Result<Self> {
        ExperimentConfig::from_kv(&KvDoc::read(path)?)
    }

    /// Builds a config from a parsed document, applying defaults for absent
    /// keys. `format_version` is mandatory.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        if let Some(k) = doc.keys().find(|k| !Self::is_known_key(k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        match doc.get("format_version") {
            None => return Err(Error::Config("missing key `format_version`".into())),
            Some(v) => {
                let v: u32 = parse_num("format_version", v)?;
                if v != CONFIG_FORMAT_VERSION {
                    return Err(Error::Config(format!(
                        "unsupported format_version {v} (expected {CONFIG_FORMAT_VERSION})"
                    )));
                }
            }
        }
        let mut cfg = ExperimentConfig::default();
        let d = &mut cfg.dataset;
        let r = &mut cfg.run;
        for (k, v) in doc.iter() {
            match k {
                "format_version" => {}
                "generator" => d.generator = Generator::parse(v)?,
                "n_total" => d.n_total = parse_num(k, v)?,
                "num_classes" => d.num_classes = parse_num(k, v)?,
                "num_attributes" => d.num_attributes = parse_num(k, v)?,
                "class_proportions" => d.class_proportions = parse_list(k, v)?,
                "group_proportions" => {
                    d.group_proportions = v
                        .split(';')
                        .map(|row| parse_list(k, row))
                        .collect::<Result<_>>()?
                }
                "core_noise" => d.core_noise = parse_num(k, v)?,
                "spurious_noise" => d.spurious_noise = parse_num(k, v)?,
                "core_dim" => d.core_dim = parse_num(k, v)?,
                "spurious_dim" => d.spurious_dim = parse_num(k, v)?,
                "seed" => {
                    r.seed = parse_num(k, v)?;
                    d.seed = r.seed;
                }
                "lambda" => r.lambda = parse_num(k, v)?,
                "stage1_epochs" => r.stage1_epochs = parse_num(k, v)?,
                "mu" => r.mu = parse_num(k, v)?,
                "stage2_epochs" => r.stage2_epochs = parse_num(k, v)?,
                "learning_rate" => r.learning_rate = parse_num(k, v)?,
                "aux_learning_rate" => {
                    r.aux_learning_rate = if v.is_empty() || v == "none" {
                        None
                    } else {
                        Some(parse_num(k, v)?)
                    }
                }
                "momentum" => r.momentum = parse_num(k, v)?,
                "weight_decay_stage1" => r.weight_decay_stage1 = parse_num(k, v)?,
                "weight_decay_stage2" => r.weight_decay_stage2 = parse_num(k, v)?,
                "batch_size" => r.batch_size = parse_num(k, v)?,
                "mode" => r.mode = Stage2Mode::parse(v)?,
                "criterion" => r.criterion = Criterion::parse(v)?,
                "classdiff_smoothing_threshold" => {
                    r.classdiff_smoothing_threshold = parse_num(k, v)?
                }
                "hidden_dims" => r.hidden_dims = parse_list(k, v)?,
                _ => unreachable!("filtered above"),
            }
        }
        cfg.dataset.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.run.validate()?;
        Ok(cfg)
    }

    /// Canonical rendering; `from_kv(to_kv())` is the identity.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.push("format_version", CONFIG_FORMAT_VERSION);
        for (k, v) in self.dataset.to_kv().iter() {
            if k != "seed" {
                doc.push(k, v);
            }
        }
        let r = &self.run;
        doc.push("seed", r.seed);
        doc.push("lambda", r.lambda);
        doc.push("stage1_epochs", r.stage1_epochs);
        doc.push("mu", r.mu);
        doc.push("stage2_epochs", r.stage2_epochs);
        doc.push("learning_rate", r.learning_rate);
        doc.push(
            "aux_learning_rate",
            r.aux_learning_rate.map_or("none".to_string(), |v| v.to_string()),
        );
        doc.push("momentum", r.momentum);
        doc.push("weight_decay_stage1", r.weight_decay_stage1);
        doc.push("weight_decay_stage2", r.weight_decay_stage2);
        doc.push("batch_size", r.batch_size);
        doc.push("mode", r.mode);
        doc.push("criterion", r.criterion);
        doc.push("classdiff_smoothing_threshold", r.classdiff_smoothing_threshold);
        doc.push("hidden_dims", join(&r.hidden_dims));
        doc
    }

    /// Applies one `key = value` override (used by sweeps).
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc = self.to_kv();
        let mut out = KvDoc::default();
        for (k, v) in doc.iter() {
            out.push(k, if k == key { value } else { v });
        }
        if out.get(key).is_none() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        doc = out;
        ExperimentConfig::from_kv(&doc)
    }
}
