//! Synthetic spurious-correlation datasets.
//!
//! Every example concatenates a *core* block, whose mean depends on the
//! label, with a *spurious* block, whose mean depends on a nuisance
//! attribute. Group membership `g = y·A + a` controls how often the two
//! agree. With a noisy core block and a clean spurious block the attribute
//! is the easier signal to learn, which is the shortcut the training
//! pipeline has to overcome.
//!
//! Group labels stay on [`Example`]; the training path only ever sees a
//! [`TrainingData`] view, which carries features and labels and nothing else.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv::{join, parse_list, parse_num, KvDoc};
use crate::numkit::Matrix;
use crate::rng::{stream, Stream};

pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TEST_FILE: &str = "test.csv";
pub const SPEC_FILE: &str = "dataset_spec.txt";

pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.15, 0.15];

/// One labelled example. `attribute` and `group` are `None` when group
/// annotations have been withheld.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
    attribute: Option<usize>,
    group: Option<usize>,
}

impl Example {
    pub fn new(
        id: usize,
        features: Vec<f64>,
        label: usize,
        attribute: usize,
        num_attributes: usize,
    ) -> Self {
        Example {
            id,
            features,
            label,
            attribute: Some(attribute),
            group: Some(group_id(label, attribute, num_attributes)),
        }
    }

    pub fn unannotated(id: usize, features: Vec<f64>, label: usize) -> Self {
        Example {
            id,
            features,
            label,
            attribute: None,
            group: None,
        }
    }

    pub fn attribute(&self) -> Option<usize> {
        self.attribute
    }

    pub fn group(&self) -> Option<usize> {
        self.group
    }

    pub fn withhold_annotation(&mut self) {
        self.attribute = None;
        self.group = None;
    }
}

pub fn group_id(label: usize, attribute: usize, num_attributes: usize) -> usize {
    label * num_attributes + attribute
}

/// Which feature geometry to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Axis-aligned unit-vector means per class and per attribute.
    Blobs,
    /// Dense random templates: a high-dimensional noisy "image" block with a
    /// small clean "patch" block appended.
    PatchComposite,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Blobs => "blobs",
            Generator::PatchComposite => "patch_composite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Generator::Blobs),
            "patch_composite" => Ok(Generator::PatchComposite),
            other => Err(Error::Config(format!("unknown generator `{other}`"))),
        }
    }
}

/// Full description of a synthetic dataset. Generation is a pure function
/// of this value.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n_total: usize,
    pub num_classes: usize,
    pub num_attributes: usize,
    pub class_proportions: Vec<f64>,
    /// Per class, the split of that class over attributes.
    pub group_proportions: Vec<Vec<f64>>,
    pub core_noise: f64,
    pub spurious_noise: f64,
    pub core_dim: usize,
    pub spurious_dim: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// The standard benchmark: balanced binary classes, two attributes, and
    /// within each class the attribute matching the label takes
    /// `1 - minority_fraction` of the examples.
    pub fn spurious_benchmark(n_total: usize, minority_fraction: f64, seed: u64) -> Self {
        let major = 1.0 - minority_fraction;
        DatasetSpec {
            generator: Generator::Blobs,
            n_total,
            num_classes: 2,
            num_attributes: 2,
            class_proportions: vec![0.5, 0.5],
            group_proportions: vec![
                vec![major, minority_fraction],
                vec![minority_fraction, major],
            ],
            core_noise: 0.9,
            spurious_noise: 0.05,
            core_dim: 50,
            spurious_dim: 2,
            seed,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.num_classes * self.num_attributes
    }

    pub fn feature_dim(&self) -> usize {
        self.core_dim + self.spurious_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_total == 0 {
            return bad("n_total must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.num_attributes == 0 {
            return bad("need at least 1 attribute".into());
        }
        check_proportions("class_proportions", &self.class_proportions, self.num_classes)?;
        if self.group_proportions.len() != self.num_classes {
            return bad(format!(
                "group_proportions has {} rows, expected {}",
                self.group_proportions.len(),
                self.num_classes
            ));
        }
        for (c, row) in self.group_proportions.iter().enumerate() {
            check_proportions(&format!("group_proportions[{c}]"), row, self.num_attributes)?;
        }
        for (name, v) in [("core_noise", self.core_noise), ("spurious_noise", self.spurious_noise)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.core_dim == 0 {
            return bad("core_dim must be positive".into());
        }
        if self.generator == Generator::Blobs {
            if self.core_dim < self.num_classes {
                return bad(format!(
                    "blobs needs core_dim >= num_classes ({} < {})",
                    self.core_dim, self.num_classes
                ));
            }
            if self.spurious_dim > 0 && self.spurious_dim < self.num_attributes {
                return bad(format!(
                    "blobs needs spurious_dim = 0 or >= num_attributes ({} < {})",
                    self.spurious_dim, self.num_attributes
                ));
            }
        }
        Ok(())
    }

    /// Exact per-group counts (index `g = y·A + a`) by largest-remainder
    /// rounding of `n_total · p_class · p_group`.
    pub fn group_counts(&self) -> Vec<usize> {
        let targets: Vec<f64> = (0..self.num_groups())
            .map(|g| {
                let (c, a) = (g / self.num_attributes, g % self.num_attributes);
                self.n_total as f64 * self.class_proportions[c] * self.group_proportions[c][a]
            })
            .collect();
        largest_remainder(&targets, self.n_total)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.push("generator", self.generator.as_str());
        doc.push("n_total", self.n_total);
        doc.push("num_classes", self.num_classes);
        doc.push("num_attributes", self.num_attributes);
        doc.push("class_proportions", join(&self.class_proportions));
        doc.push(
            "group_proportions",
            self.group_proportions
                .iter()
                .map(|r| join(r))
                .collect::<Vec<_>>()
                .join(";"),
        );
        doc.push("core_noise", self.core_noise);
        doc.push("spurious_noise", self.spurious_noise);
        doc.push("core_dim", self.core_dim);
        doc.push("spurious_dim", self.spurious_dim);
        doc.push("seed", self.seed);
        doc
    }

    /// Reads the keys written by [`DatasetSpec::to_kv`]; other keys are
    /// ignored so the same document can carry run settings.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let req = |k: &str| {
            doc.get(k)
                .ok_or_else(|| Error::Config(format!("missing key `{k}`")))
        };
        let group_proportions = req("group_proportions")?
            .split(';')
            .map(|row| parse_list("group_proportions", row))
            .collect::<Result<Vec<_>>>()?;
        let spec = DatasetSpec {
            generator: Generator::parse(req("generator")?)?,
            n_total: parse_num("n_total", req("n_total")?)?,
            num_classes: parse_num("num_classes", req("num_classes")?)?,
            num_attributes: parse_num("num_attributes", req("num_attributes")?)?,
            class_proportions: parse_list("class_proportions", req("class_proportions")?)?,
            group_proportions,
            core_noise: parse_num("core_noise", req("core_noise")?)?,
            spurious_noise: parse_num("spurious_noise", req("spurious_noise")?)?,
            core_dim: parse_num("core_dim", req("core_dim")?)?,
            spurious_dim: parse_num("spurious_dim", req("spurious_dim")?)?,
            seed: parse_num("seed", req("seed")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn check_proportions(name: &str, p: &[f64], expected_len: usize) -> Result<()> {
    if p.len() != expected_len {
        return Err(Error::invalid(format!(
            "{name} has {} entries, expected {expected_len}",
            p.len()
        )));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(format!("{name} entries must be non-negative")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Integer apportionment of `total` following real-valued `targets` (which
/// must sum to `total`): floors first, then one extra unit to the largest
/// fractional remainders, lower index first on ties.
pub fn largest_remainder(targets: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Examples plus any non-fatal issues found while producing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub examples: Vec<Example>,
    pub warnings: Vec<String>,
}

/// Axis-aligned Gaussian blobs: class `c` centres its core block on `e_c`,
/// attribute `a` centres its spurious block on `e_a`.
pub fn gen_blobs(spec: &DatasetSpec) -> Result<Generated> {
    let mut s = spec.clone();
    s.generator = Generator::Blobs;
    s.validate()?;
    let core: Vec<Vec<f64>> = (0..s.num_classes).map(|c| unit(s.core_dim, c)).collect();
    let spur: Vec<Vec<f64>> = (0..s.num_attributes)
        .map(|a| if s.spurious_dim == 0 { Vec::new() } else { unit(s.spurious_dim, a) })
        .collect();
    generate(&s, &core, &spur)
}

/// Dense random templates (each of unit norm) drawn from the data stream,
/// then Gaussian noise per block. `spurious_dim = 0` gives a core-only set.
pub fn gen_patch_composite(spec: &DatasetSpec) -> Result<Generated> {
    let mut s = spec.clone();
    s.generator = Generator::PatchComposite;
    s.validate()?;
    // Templates come from a separate stream so changing n does not move them.
    let mut trng = stream(s.seed ^ 0x7e3a_11c5, Stream::Data);
    let mut template = |dim: usize| -> Vec<f64> {
        if dim == 0 {
            return Vec::new();
        }
        let v: Vec<f64> = (0..dim).map(|_| trng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect()
    };
    let core: Vec<Vec<f64>> = (0..s.num_classes).map(|_| template(s.core_dim)).collect();
    let spur: Vec<Vec<f64>> = (0..s.num_attributes).map(|_| template(s.spurious_dim)).collect();
    generate(&s, &core, &spur)
}

/// Dispatches on `spec.generator`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Generated> {
    match spec.generator {
        Generator::Blobs => gen_blobs(spec),
        Generator::PatchComposite => gen_patch_composite(spec),
    }
}

fn unit(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

fn generate(spec: &DatasetSpec, core: &[Vec<f64>], spur: &[Vec<f64>]) -> Result<Generated> {
    let counts = spec.group_counts();
    let mut warnings = Vec::new();
    let mut rng = stream(spec.seed, Stream::Data);
    let mut examples = Vec::with_capacity(spec.n_total);
    for (g, &count) in counts.iter().enumerate() {
        let (c, a) = (g / spec.num_attributes, g % spec.num_attributes);
        let p = spec.class_proportions[c] * spec.group_proportions[c][a];
        if count == 0 && p > 0.0 {
            warnings.push(format!(
                "group {g} (class {c}, attribute {a}) has positive proportion but rounds to 0 examples"
            ));
        }
        for _ in 0..count {
            let mut f = Vec::with_capacity(spec.feature_dim());
            for &m in &core[c] {
                f.push(m + spec.core_noise * rng.sample::<f64, _>(StandardNormal));
            }
            for &m in &spur[a] {
                f.push(m + spec.spurious_noise * rng.sample::<f64, _>(StandardNormal));
            }
            examples.push((f, c, a));
        }
    }
    examples.shuffle(&mut rng);
    let examples = examples
        .into_iter()
        .enumerate()
        .map(|(id, (f, c, a))| Example::new(id, f, c, a, spec.num_attributes))
        .collect();
    Ok(Generated { examples, warnings })
}

/// Train/validation/test partition of one generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub spec: DatasetSpec,
    pub warnings: Vec<String>,
}

impl SplitDataset {
    /// Generates and splits with the default 0.70/0.15/0.15 fractions.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let generated = generate_dataset(spec)?;
        let mut out = split(generated.examples, DEFAULT_SPLIT, spec.clone())?;
        let mut w = generated.warnings;
        w.append(&mut out.warnings);
        out.warnings = w;
        Ok(out)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn num_attributes(&self) -> usize {
        self.spec.num_attributes
    }

    /// Drops attribute/group labels from the validation split.
    pub fn withhold_validation_groups(&mut self) {
        self.validation.iter_mut().for_each(Example::withhold_annotation);
    }

    pub fn train_data(&self) -> Result<TrainingData> {
        TrainingData::from_examples(&self.train, self.num_classes())
    }
}

/// Stratified split: each group is shuffled and cut by largest-remainder
/// rounding of the fractions. Groups with fewer than 3 members go entirely
/// to train (with a warning). Each output split is ordered by example id.
pub fn split(examples: Vec<Example>, fractions: [f64; 3], spec: DatasetSpec) -> Result<SplitDataset> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut rng = stream(spec.seed, Stream::Split);
    let mut by_group: std::collections::BTreeMap<Option<usize>, Vec<Example>> = Default::default();
    for e in examples {
        by_group.entry(e.group()).or_default().push(e);
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut warnings = Vec::new();
    for (g, mut members) in by_group {
        members.sort_by_key(|e| e.id);
        members.shuffle(&mut rng);
        let n = members.len();
        if n < 3 {
            warnings.push(format!(
                "group {g:?} has only {n} examples; all assigned to train"
            ));
            train.extend(members);
            continue;
        }
        let targets: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
        let sizes = largest_remainder(&targets, n);
        let mut it = members.into_iter();
        train.extend(it.by_ref().take(sizes[0]));
        validation.extend(it.by_ref().take(sizes[1]));
        test.extend(it);
    }
    for s in [&mut train, &mut validation, &mut test] {
        s.sort_by_key(|e| e.id);
    }
    Ok(SplitDataset {
        train,
        validation,
        test,
        spec,
        warnings,
    })
}

/// Annotation-free view used by every training routine.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl TrainingData {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid("feature rows and labels differ in length"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(TrainingData {
            features,
            labels,
            num_classes,
        })
    }

    pub fn from_examples(examples: &[Example], num_classes: usize) -> Result<Self> {
        let rows: Vec<&[f64]> = examples.iter().map(|e| e.features.as_slice()).collect();
        let features = if rows.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&rows)?
        };
        TrainingData::new(features, examples.iter().map(|e| e.label).collect(), num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Features and labels for the given rows (repeats allowed).
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn split_header(dim: usize) -> String {
    let mut h = String::from("example_index,label,attribute,group");
    for i in 0..dim {
        let _ = write!(h, ",f_{i}");
    }
    h
}

fn opt_field(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders one split in the CSV schema
/// `example_index,label,attribute,group,f_0,...,f_{d-1}`. Floats use the
/// shortest round-trip decimal form.
pub fn render_split_csv(examples: &[Example], dim: usize) -> String {
    let mut out = split_header(dim);
    out.push('\n');
    for e in examples {
        let _ = write!(
            out,
            "{},{},{},{}",
            e.id,
            e.label,
            opt_field(e.attribute),
            opt_field(e.group)
        );
        for v in &e.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes the three split files and the dataset spec echo into `dir`.
pub fn save_csv(split: &SplitDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = split.spec.feature_dim();
    for (name, part) in [
        (TRAIN_FILE, &split.train),
        (VALIDATION_FILE, &split.validation),
        (TEST_FILE, &split.test),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, render_split_csv(part, dim)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(SPEC_FILE);
    let mut text = String::from("# dataset spec\n");
    text.push_str(&split.spec.to_kv().render());
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a directory written by [`save_csv`].
pub fn load_csv(dir: &Path) -> Result<SplitDataset> {
    let spec = DatasetSpec::from_kv(&KvDoc::read(&dir.join(SPEC_FILE))?)?;
    let read = |name: &str| parse_split_csv(&dir.join(name), &spec);
    Ok(SplitDataset {
        train: read(TRAIN_FILE)?,
        validation: read(VALIDATION_FILE)?,
        test: read(TEST_FILE)?,
        spec,
        warnings: Vec::new(),
    })
}

fn parse_split_csv(path: &Path, spec: &DatasetSpec) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let dim = spec.feature_dim();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    if header != split_header(dim) {
        return Err(err(1, format!("unexpected header `{header}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + dim {
            return Err(err(ln, format!("expected {} fields, got {}", 4 + dim, fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| err(ln, format!("bad {what} `{s}`")))
        };
        let id = num(fields[0], "example_index")?;
        let label = num(fields[1], "label")?;
        if label >= spec.num_classes {
            return Err(err(ln, format!("label {label} out of range")));
        }
        let features = fields[4..]
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(ln, format!("bad feature `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let example = match (fields[2], fields[3]) {
            ("", "") => Example::unannotated(id, features, label),
            (a, g) => {
                let a = num(a, "attribute")?;
                let g = num(g, "group")?;
                if a >= spec.num_attributes || g != group_id(label, a, spec.num_attributes) {
                    return Err(err(ln, format!("group {g} inconsistent with label {label}, attribute {a}")));
                }
                Example::new(id, features, label, a, spec.num_attributes)
            }
        };
        out.push(example);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec::spurious_benchmark(n, 0.1, seed)
    }

    #[test]
    fn benchmark_group_counts() {
        assert_eq!(small_spec(100, 0).group_counts(), vec![45, 5, 5, 45]);
        let g = gen_blobs(&small_spec(100, 0)).unwrap();
        let mut counts = [0; 4];
        for e in &g.examples {
            counts[e.group().unwrap()] += 1;
        }
        assert_eq!(counts, [45, 5, 5, 45]);
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn largest_remainder_is_exact() {
        assert_eq!(largest_remainder(&[700.0, 150.0, 150.0], 1000), vec![700, 150, 150]);
        assert_eq!(largest_remainder(&[3.5, 3.5, 3.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.4, 0.3, 0.3], 1), vec![1, 0, 0]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_blobs(&small_spec(200, 3)).unwrap();
        let b = gen_blobs(&small_spec(200, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_blobs(&small_spec(200, 4)).unwrap());
    }

    #[test]
    fn rounding_to_zero_is_a_warning() {
        let g = gen_blobs(&small_spec(8, 0)).unwrap();
        assert_eq!(g.examples.len(), 8);
        assert!(!g.warnings.is_empty());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = small_spec(100, 0);
        s.class_proportions = vec![0.5, 0.6];
        assert!(gen_blobs(&s).is_err());
        let mut s = small_spec(100, 0);
        s.core_dim = 1;
        assert!(gen_blobs(&s).is_err());
        let mut s = small_spec(100, 0);
        s.spurious_noise = 0.0;
        assert!(gen_blobs(&s).is_err());
    }

    #[test]
    fn one_group_split_sizes() {
        let mut s = small_spec(1000, 1);
        s.class_proportions = vec![1.0, 0.0];
        s.group_proportions = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = SplitDataset::generate(&s).unwrap();
        assert_eq!((d.train.len(), d.validation.len(), d.test.len()), (700, 150, 150));
    }

    #[test]
    fn tiny_groups_go_to_train() {
        let mut s = small_spec(42, 0);
        s.group_proportions = vec![vec![0.96, 0.04], vec![0.04, 0.96]];
        let d = SplitDataset::generate(&s).unwrap();
        // 42·0.5·0.04 = 0.84 → 1 example per minority group
        assert!(d.warnings.iter().any(|w| w.contains("all assigned to train")));
        assert!(d.validation.iter().all(|e| e.group() == Some(0) || e.group() == Some(3)));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let d = SplitDataset::generate(&small_spec(537, 9)).unwrap();
        let mut ids: Vec<usize> = d
            .train
            .iter()
            .chain(&d.validation)
            .chain(&d.test)
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..537).collect::<Vec<_>>());
    }

    #[test]
    fn validation_group_mix_matches_train() {
        let d = SplitDataset::generate(&small_spec(2000, 2)).unwrap();
        let count = |s: &[Example]| {
            let mut c = [0usize; 4];
            s.iter().for_each(|e| c[e.group().unwrap()] += 1);
            c
        };
        let (tr, va) = (count(&d.train), count(&d.validation));
        // group sizes 900/100/100/900 → 630/135/135 and 70/15/15
        assert_eq!(tr, [630, 70, 70, 630]);
        assert_eq!(va, [135, 15, 15, 135]);
    }

    #[test]
    fn csv_round_trip_and_golden_layout() {
        let dir = tempfile::tempdir().unwrap();
        let d = SplitDataset::generate(&small_spec(60, 5)).unwrap();
        save_csv(&d, dir.path()).unwrap();
        let back = load_csv(dir.path()).unwrap();
        assert_eq!(back.train, d.train);
        assert_eq!(back.validation, d.validation);
        assert_eq!(back.test, d.test);
        assert_eq!(back.spec, d.spec);

        let one = [Example::new(7, vec![0.25, -1.5, 1e-3, 3.0], 1, 0, 2)];
        assert_eq!(
            render_split_csv(&one, 4),
            "example_index,label,attribute,group,f_0,f_1,f_2,f_3\n7,1,0,2,0.25,-1.5,0.001,3\n"
        );
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let d = SplitDataset::generate(&small_spec(60, 5)).unwrap();
        save_csv(&d, dir.path()).unwrap();
        let path = dir.path().join(TEST_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("example_index", "idx", 1)).unwrap();
        assert!(matches!(load_csv(dir.path()), Err(Error::Parse { line: 1, .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = "x,0,0,0,1,2,3,4".into();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(load_csv(dir.path()), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn withheld_annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = SplitDataset::generate(&small_spec(60, 5)).unwrap();
        d.withhold_validation_groups();
        save_csv(&d, dir.path()).unwrap();
        let back = load_csv(dir.path()).unwrap();
        assert!(back.validation.iter().all(|e| e.group().is_none()));
        assert!(back.train.iter().all(|e| e.group().is_some()));
    }

    #[test]
    fn core_only_patch_composite() {
        let mut s = small_spec(100, 1);
        s.generator = Generator::PatchComposite;
        s.core_dim = 6;
        s.spurious_dim = 0;
        let g = gen_patch_composite(&s).unwrap();
        assert!(g.examples.iter().all(|e| e.features.len() == 6));
        assert_eq!(s.group_counts(), vec![45, 5, 5, 45]);
    }
}
