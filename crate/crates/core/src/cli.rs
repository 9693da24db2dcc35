//! The `bamlab` command line: `gen-data`, `train`, `sweep`, `analyze`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! run fails while executing.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::analysis::{self, RunReport};
use crate::config::{Criterion, ExperimentConfig, Stage2Mode};
use crate::data::{self, SplitDataset};
use crate::error::{Error, Result};
use crate::kv::{parse_num, KvDoc};
use crate::pipeline::{render_epochs_csv, run_experiment_detailed, ExperimentOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Default cap on the number of runs one sweep may expand to.
pub const DEFAULT_MAX_RUNS: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "bamlab", version, about = "Two-stage bias-amplification training on synthetic spurious-correlation data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset and write its train/validation/test CSVs.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run both stages on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, value_enum)]
        criterion: Option<CriterionArg>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Train as if the validation split had no attribute labels.
        #[arg(long)]
        withhold_validation_groups: bool,
    },
    /// Run every point of a sweep grid, then write an aggregate table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rerun points that already have a summary.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Extract plot data from finished runs.
    Analyze {
        #[arg(value_enum)]
        kind: AnalysisKind,
        /// Run directories, or directories containing runs (e.g. a sweep).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    #[value(name = "worst-group-val", alias = "worst_group_val")]
    WorstGroupVal,
    #[value(name = "class-diff", alias = "class_diff")]
    ClassDiff,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::WorstGroupVal => Criterion::WorstGroupVal,
            CriterionArg::ClassDiff => Criterion::ClassDiff,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    #[value(name = "one-m", alias = "one_m")]
    OneM,
    #[value(name = "two-m", alias = "two_m")]
    TwoM,
}

impl From<ModeArg> for Stage2Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OneM => Stage2Mode::OneM,
            ModeArg::TwoM => Stage2Mode::TwoM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Classdiff,
    Aux,
    Ablation,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::GenData { config, out, force } => gen_data(config, out, *force),
        Command::Train {
            config,
            data,
            out,
            force,
            criterion,
            mode,
            withhold_validation_groups,
        } => {
            let mut cfg = ExperimentConfig::read(config).map_err(as_config)?;
            if let Some(c) = criterion {
                cfg.run.criterion = (*c).into();
            }
            if let Some(m) = mode {
                cfg.run.mode = (*m).into();
            }
            let mut split = data::load_csv(data)?;
            if *withhold_validation_groups {
                split.withhold_validation_groups();
            }
            prepare_out_dir(out, *force)?;
            let summary = train(&cfg, &split, out)?;
            println!("{}", summary.trim_end());
            Ok(())
        }
        Command::Sweep {
            config,
            data,
            out,
            force,
            jobs,
        } => {
            let spec = SweepSpec::read(config)?;
            let split = data::load_csv(data)?;
            let report = sweep(&spec, &split, out, *force, *jobs)?;
            println!(
                "{} runs: {} trained, {} reused, {} failed",
                report.total, report.trained, report.reused, report.failures
            );
            if report.failures > 0 {
                return Err(Error::Stage {
                    stage: "sweep",
                    source: Box::new(Error::Numeric(format!(
                        "{} of {} runs failed; see {}",
                        report.failures,
                        report.total,
                        out.join(FAILURES_FILE).display()
                    ))),
                });
            }
            Ok(())
        }
        Command::Analyze { kind, runs, out, force } => {
            prepare_out_dir(out, *force)?;
            for f in analyze(*kind, runs, out)? {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

/// Problems reading the config file itself are usage errors.
fn as_config(e: Error) -> Error {
    match e {
        Error::Parse { .. } | Error::Io { .. } => Error::Config(e.to_string()),
        other => other,
    }
}

/// Creates `dir`; refuses a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_dir() && !force {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::invalid(format!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn gen_data(config: &Path, out: &Path, force: bool) -> Result<()> {
    let cfg = ExperimentConfig::read(config).map_err(as_config)?;
    let split = SplitDataset::generate(&cfg.dataset)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    prepare_out_dir(out, force)?;
    data::save_csv(&split, out)?;
    println!(
        "wrote {} train / {} validation / {} test examples to {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

/// Runs one experiment on `split` and writes its artifacts into `out`
/// (which must exist). The dataset description in the summary is taken
/// from `split`. Returns the rendered summary.
pub fn train(cfg: &ExperimentConfig, split: &SplitDataset, out: &Path) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.dataset = split.spec.clone();
    cfg.dataset.seed = cfg.run.seed;
    let output = run_experiment_detailed(&cfg, split)?;
    write_run(&output, split, out)?;
    Ok(output.summary.render())
}

/// `summary.txt`, `epochs.csv`, `stage1.ckpt`, `error_set.csv` and, when
/// Stage 1 ran, `aux_bank.csv`.
pub fn write_run(output: &ExperimentOutput, split: &SplitDataset, out: &Path) -> Result<()> {
    write(&out.join(analysis::SUMMARY_FILE), output.summary.render())?;
    write(&out.join("epochs.csv"), render_epochs_csv(&output.summary.trajectory))?;
    output.biased_model.save_checkpoint(out.join("stage1.ckpt"))?;
    let mut e = String::from("example_index\n");
    for i in output.error_set.indices() {
        let _ = writeln!(e, "{i}");
    }
    write(&out.join("error_set.csv"), e)?;
    if let Some(aux) = &output.aux {
        let groups: Vec<Option<usize>> = split.train.iter().map(|x| x.group()).collect();
        aux.write_csv(&out.join(analysis::AUX_FILE), &groups)?;
    }
    Ok(())
}

/// A sweep file: a config (any keys) plus `sweep.<key> = v1 v2 ...` lines,
/// `seeds = s1 s2 ...` and an optional `max_runs` cap. Values within a list
/// are separated by whitespace.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: Vec<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
    pub max_runs: usize,
}

/// One expanded grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub name: String,
    pub config: ExperimentConfig,
}

const DATASET_ONLY: [&str; 10] = [
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

impl SweepSpec {
    pub fn read(path: &Path) -> Result<Self> {
        SweepSpec::from_kv(&KvDoc::read(path).map_err(as_config)?)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut base = KvDoc::default();
        let mut axes = Vec::new();
        let mut seeds = None;
        let mut max_runs = DEFAULT_MAX_RUNS;
        for (k, v) in doc.iter() {
            if let Some(key) = k.strip_prefix("sweep.") {
                if !ExperimentConfig::is_known_key(key) || key == "format_version" {
                    return Err(Error::Config(format!("cannot sweep unknown key `{key}`")));
                }
                if key == "seed" {
                    return Err(Error::Config("vary seeds with `seeds = ...`, not `sweep.seed`".into()));
                }
                if DATASET_ONLY.contains(&key) {
                    return Err(Error::Config(format!(
                        "`{key}` describes the dataset, which a sweep takes from --data"
                    )));
                }
                let values: Vec<String> = v.split_whitespace().map(str::to_string).collect();
                if values.is_empty() {
                    return Err(Error::Config(format!("`{k}` has no values")));
                }
                axes.push((key.to_string(), values));
            } else if k == "seeds" {
                let s = v
                    .split_whitespace()
                    .map(|s| parse_num::<u64>(k, s))
                    .collect::<Result<Vec<_>>>()?;
                if s.is_empty() {
                    return Err(Error::Config("`seeds` has no values".into()));
                }
                seeds = Some(s);
            } else if k == "max_runs" {
                max_runs = parse_num(k, v)?;
            } else {
                base.push(k, v);
            }
        }
        let base = ExperimentConfig::from_kv(&base)?;
        for (k, vals) in &axes {
            for v in vals {
                base.with_override(k, v)?;
            }
        }
        let seeds = seeds.unwrap_or_else(|| vec![base.run.seed]);
        let spec = SweepSpec {
            base,
            axes,
            seeds,
            max_runs,
        };
        let n = spec.size();
        if n > spec.max_runs {
            return Err(Error::Config(format!(
                "sweep expands to {n} runs, above max_runs = {}",
                spec.max_runs
            )));
        }
        Ok(spec)
    }

    /// Number of runs: product of axis lengths times the number of seeds.
    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product::<usize>() * self.seeds.len()
    }

    /// Grid points in file order, last axis fastest, seeds innermost.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let mut points = Vec::with_capacity(self.size());
        let mut idx = vec![0usize; self.axes.len()];
        loop {
            let mut cfg = self.base.clone();
            let mut name = String::new();
            for ((k, vals), &i) in self.axes.iter().zip(&idx) {
                cfg = cfg.with_override(k, &vals[i])?;
                let _ = write!(name, "{k}={}+", vals[i].replace(',', "-"));
            }
            for &s in &self.seeds {
                points.push(SweepPoint {
                    name: format!("{name}seed={s}"),
                    config: cfg.with_override("seed", &s.to_string())?,
                });
            }
            let mut d = self.axes.len();
            loop {
                if d == 0 {
                    return Ok(points);
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.axes[d].1.len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FAILURES_FILE: &str = "failures.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepReport {
    pub total: usize,
    pub trained: usize,
    pub reused: usize,
    pub failures: usize,
}

enum Outcome {
    Trained(RunReport),
    Reused(RunReport),
    Failed(String),
}

/// Runs all grid points (up to `jobs` at a time) on one dataset. Points
/// whose directory already holds a summary are reused unless `force`.
/// Failures are collected in `failures.csv`; the aggregate table lists the
/// successful runs in grid order.
pub fn sweep(spec: &SweepSpec, split: &SplitDataset, out: &Path, force: bool, jobs: usize) -> Result<SweepReport> {
    let points = spec.points()?;
    eprintln!("sweep: {} runs ({} grid points x {} seeds)", points.len(), points.len() / spec.seeds.len(), spec.seeds.len());
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))?;

    let run_point = |p: &SweepPoint| -> Outcome {
        let dir = runs_dir.join(&p.name);
        if !force && dir.join(analysis::SUMMARY_FILE).is_file() {
            return match RunReport::load(&dir) {
                Ok(r) => Outcome::Reused(r),
                Err(e) => Outcome::Failed(format!("existing summary unreadable: {e}")),
            };
        }
        let result = std::fs::create_dir_all(&dir)
            .map_err(|e| Error::io(&dir, e))
            .and_then(|_| train(&p.config, split, &dir))
            .and_then(|_| RunReport::load(&dir));
        match result {
            Ok(r) => Outcome::Trained(r),
            Err(e) => Outcome::Failed(e.to_string()),
        }
    };
    let outcomes: Vec<Outcome> = pool.install(|| points.par_iter().map(run_point).collect());

    let mut agg = String::from("lambda,T,mu,mode,seed,selected_epoch,worst_group_test_acc,avg_test_acc,run\n");
    let mut failed = String::from("run,error\n");
    let mut report = SweepReport {
        total: points.len(),
        trained: 0,
        reused: 0,
        failures: 0,
    };
    for (p, o) in points.iter().zip(&outcomes) {
        let r = match o {
            Outcome::Trained(r) => {
                report.trained += 1;
                r
            }
            Outcome::Reused(r) => {
                report.reused += 1;
                r
            }
            Outcome::Failed(msg) => {
                report.failures += 1;
                let _ = writeln!(failed, "{},\"{}\"", p.name, msg.replace('"', "'"));
                continue;
            }
        };
        let c = &r.config.run;
        let _ = writeln!(
            agg,
            "{},{},{},{},{},{},{},{},{}",
            c.lambda,
            c.stage1_epochs,
            c.mu,
            c.mode,
            c.seed,
            r.selected_epoch,
            r.test_worst_group_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            r.test_average_accuracy,
            p.name
        );
    }
    write(&out.join(AGGREGATE_FILE), agg)?;
    let fpath = out.join(FAILURES_FILE);
    if report.failures > 0 {
        write(&fpath, failed)?;
    } else if fpath.exists() {
        std::fs::remove_file(&fpath).map_err(|e| Error::io(&fpath, e))?;
    }
    Ok(report)
}

/// Writes the tables for `kind` into `out` and returns their paths.
///
/// * `classdiff`: `classdiff.csv` (per-epoch pairs) and
///   `classdiff_spearman.csv` (one coefficient per run).
/// * `aux`: `aux_<run>.csv` per run, `2 + C` columns.
/// * `ablation`: `ablation.csv`, mean and sample sd of worst-group test
///   accuracy per `(T, mode)`.
pub fn analyze(kind: AnalysisKind, paths: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let dirs = analysis::discover_runs(paths)?;
    let mut written = Vec::new();
    match kind {
        AnalysisKind::Classdiff => {
            let runs = dirs.iter().map(|d| RunReport::load(d)).collect::<Result<Vec<_>>>()?;
            let (pairs, coef) = analysis::render_classdiff(&analysis::classdiff_series(&runs)?);
            for (name, text) in [("classdiff.csv", pairs), ("classdiff_spearman.csv", coef)] {
                write(&out.join(name), text)?;
                written.push(out.join(name));
            }
        }
        AnalysisKind::Aux => {
            let mut names: Vec<String> = Vec::new();
            let mut offenders = Vec::new();
            for d in &dirs {
                let name = d
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into());
                if names.contains(&name) {
                    offenders.push(format!("{} (duplicate run name)", d.display()));
                }
                if !d.join(analysis::AUX_FILE).is_file() {
                    offenders.push(format!("{} (no {})", d.display(), analysis::AUX_FILE));
                }
                names.push(name);
            }
            if !offenders.is_empty() {
                return Err(Error::invalid(format!("cannot extract aux tables: {}", offenders.join("; "))));
            }
            for (d, name) in dirs.iter().zip(&names) {
                let path = out.join(format!("aux_{name}.csv"));
                write(&path, analysis::render_aux(&analysis::load_aux(d)?))?;
                written.push(path);
            }
        }
        AnalysisKind::Ablation => {
            let runs = dirs.iter().map(|d| RunReport::load(d)).collect::<Result<Vec<_>>>()?;
            let path = out.join("ablation.csv");
            write(&path, analysis::render_ablation(&analysis::ablation(&runs)?))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_doc(extra: &str) -> Result<SweepSpec> {
        let text = format!("format_version = 1\nn_total = 400\n{extra}");
        SweepSpec::from_kv(&KvDoc::parse(&text, Path::new("s.conf"))?)
    }

    #[test]
    fn grid_expansion_order() {
        let s = sweep_doc("sweep.lambda = 0 20\nsweep.mode = one_m two_m\nseeds = 3 4\n").unwrap();
        assert_eq!(s.size(), 8);
        let names: Vec<String> = s.points().unwrap().into_iter().map(|p| p.name).collect();
        assert_eq!(names[0], "lambda=0+mode=one_m+seed=3");
        assert_eq!(names[1], "lambda=0+mode=one_m+seed=4");
        assert_eq!(names[2], "lambda=0+mode=two_m+seed=3");
        assert_eq!(names[7], "lambda=20+mode=two_m+seed=4");
        let p = &s.points().unwrap()[5];
        assert_eq!(p.config.run.lambda, 20.0);
        assert_eq!(p.config.run.seed, 4);
    }

    #[test]
    fn sweep_without_axes_is_one_point_per_seed() {
        let s = sweep_doc("seeds = 0 1 2\n").unwrap();
        assert_eq!(s.points().unwrap().len(), 3);
    }

    #[test]
    fn sweep_rejections() {
        assert!(sweep_doc("sweep.lamda = 1 2\n").unwrap_err().to_string().contains("lamda"));
        assert!(sweep_doc("sweep.core_noise = 1 2\n").is_err());
        assert!(sweep_doc("sweep.seed = 1 2\n").is_err());
        let err = sweep_doc("sweep.lambda = 1 2 3\nseeds = 0 1\nmax_runs = 5\n").unwrap_err();
        assert!(err.to_string().contains("6 runs"), "{err}");
        assert!(err.is_usage());
        assert!(sweep_doc("sweep.mu = 0 1\n").is_err());
    }

    #[test]
    fn clap_errors_map_to_usage() {
        assert_eq!(run(["bamlab", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["bamlab"]), EXIT_USAGE);
        assert_eq!(run(["bamlab", "train", "--config", "x", "--data", "y", "--out", "z", "--mode", "three-m"]), EXIT_USAGE);
    }
}
