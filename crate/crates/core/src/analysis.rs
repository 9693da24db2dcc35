//! Post-hoc tables over finished run directories: class difference against
//! worst-group accuracy, auxiliary-variable scatter data, and the
//! continue-vs-restart ablation.
//!
//! A run directory is whatever `train` writes: `summary.txt` (key/value
//! header plus an `[epochs]` table) and, when Stage 1 ran, `aux_bank.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Stage2Mode};
use crate::error::{Error, Result};
use crate::kv::{parse_num, KvDoc};
use crate::metrics::spearman;
use crate::pipeline::SplitKind;

pub const SUMMARY_FILE: &str = "summary.txt";
pub const AUX_FILE: &str = "aux_bank.csv";

/// One row of the `[epochs]` table, reduced to what the analyses use.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: SplitKind,
    pub class_diff: f64,
    pub worst_group_accuracy: Option<f64>,
}

/// A finished run as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub selected_epoch: usize,
    pub error_set_size: usize,
    pub test_worst_group_accuracy: Option<f64>,
    pub test_average_accuracy: f64,
    pub epochs: Vec<EpochRow>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn opt_f64(path: &Path, line: usize, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("bad number `{s}`"),
    })
}

impl RunReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc = KvDoc::parse(&text, &path)?;
        let get = |k: &str| doc.get(k).ok_or_else(|| malformed(&path, format!("missing key `{k}`")));

        let mut cfg = KvDoc::default();
        for (k, v) in doc.iter() {
            if let Some(k) = k.strip_prefix("config.") {
                cfg.push(k, v);
            }
        }
        let config = ExperimentConfig::from_kv(&cfg).map_err(|e| malformed(&path, e.to_string()))?;
        let num = |k: &str| -> Result<f64> {
            parse_num(k, get(k)?).map_err(|e| malformed(&path, e.to_string()))
        };

        let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.trim() != "[epochs]");
        lines.next().ok_or_else(|| malformed(&path, "no [epochs] table"))?;
        let (_, header) = lines.next().ok_or_else(|| malformed(&path, "empty [epochs] table"))?;
        let cols: Vec<&str> = header.split(',').collect();
        let col = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| malformed(&path, format!("[epochs] lacks column `{name}`")))
        };
        let (c_epoch, c_split, c_cd, c_wg) = (col("epoch")?, col("split")?, col("class_diff")?, col("worst_group_acc")?);
        let mut epochs = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    reason: format!("expected {} fields, got {}", cols.len(), f.len()),
                });
            }
            epochs.push(EpochRow {
                epoch: f[c_epoch].parse().map_err(|_| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    reason: format!("bad epoch `{}`", f[c_epoch]),
                })?,
                split: SplitKind::parse(f[c_split])?,
                class_diff: opt_f64(&path, i + 1, f[c_cd])?
                    .ok_or_else(|| malformed(&path, format!("line {}: empty class_diff", i + 1)))?,
                worst_group_accuracy: opt_f64(&path, i + 1, f[c_wg])?,
            });
        }

        Ok(RunReport {
            dir: dir.to_path_buf(),
            config,
            selected_epoch: num("selected_epoch")? as usize,
            error_set_size: num("error_set_size")? as usize,
            test_worst_group_accuracy: opt_f64(&path, 0, get("test_worst_group_accuracy")?)?,
            test_average_accuracy: num("test_average_accuracy")?,
            epochs,
        })
    }

    /// The run directory's own name; the label used in analysis tables so
    /// they do not depend on where the runs live.
    pub fn name(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().replace(',', "-"))
            .unwrap_or_else(|| self.dir.display().to_string())
    }

    /// Validation rows of the trained Stage-2 epochs (epoch 0 excluded).
    pub fn validation_epochs(&self) -> impl Iterator<Item = &EpochRow> {
        self.epochs
            .iter()
            .filter(|r| r.split == SplitKind::Validation && r.epoch > 0)
    }
}

/// Expands each path: a directory holding `summary.txt` is a run; any other
/// directory contributes its run subdirectories (searched one level deep,
/// plus a `runs/` folder), in name order.
pub fn discover_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(SUMMARY_FILE).is_file() {
            out.push(p.clone());
            continue;
        }
        let mut found = Vec::new();
        for dir in [p.clone(), p.join("runs")] {
            let Ok(rd) = std::fs::read_dir(&dir) else { continue };
            for entry in rd {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                if entry.path().join(SUMMARY_FILE).is_file() {
                    found.push(entry.path());
                }
            }
        }
        if found.is_empty() {
            return Err(Error::invalid(format!("{} contains no runs", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

/// One run's class-difference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDiffSeries {
    pub run: String,
    /// `(epoch, class_diff, worst_group_val_acc)` for Stage-2 epochs.
    pub points: Vec<(usize, f64, f64)>,
    /// `None` when either series is constant.
    pub spearman: Option<f64>,
}

pub fn classdiff_series(runs: &[RunReport]) -> Result<Vec<ClassDiffSeries>> {
    let offenders: Vec<String> = runs
        .iter()
        .filter(|r| {
            r.validation_epochs().count() < 3 || r.validation_epochs().any(|e| e.worst_group_accuracy.is_none())
        })
        .map(|r| r.dir.display().to_string())
        .collect();
    if !offenders.is_empty() {
        return Err(Error::invalid(format!(
            "classdiff analysis needs at least 3 group-annotated validation epochs; offending runs: {}",
            offenders.join(", ")
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    let dups: Vec<String> = runs
        .iter()
        .filter(|r| !seen.insert(r.name()))
        .map(|r| r.dir.display().to_string())
        .collect();
    if !dups.is_empty() {
        return Err(Error::invalid(format!("duplicate run names: {}", dups.join(", "))));
    }
    runs.iter()
        .map(|r| {
            let points: Vec<(usize, f64, f64)> = r
                .validation_epochs()
                .map(|e| (e.epoch, e.class_diff, e.worst_group_accuracy.unwrap()))
                .collect();
            let cd: Vec<f64> = points.iter().map(|p| p.1).collect();
            let wg: Vec<f64> = points.iter().map(|p| p.2).collect();
            Ok(ClassDiffSeries {
                run: r.name(),
                spearman: spearman(&cd, &wg)?,
                points,
            })
        })
        .collect()
}

pub fn render_classdiff(series: &[ClassDiffSeries]) -> (String, String) {
    let mut pairs = String::from("run,epoch,class_diff,worst_group_val_acc\n");
    let mut coef = String::from("run,epochs,spearman\n");
    for s in series {
        for (e, cd, wg) in &s.points {
            let _ = writeln!(pairs, "{},{e},{cd},{wg}", s.run);
        }
        let _ = writeln!(
            coef,
            "{},{},{}",
            s.run,
            s.points.len(),
            s.spearman.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    (pairs, coef)
}

/// The learned bank of one run: `(example_index, group, b)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxTable {
    pub num_classes: usize,
    pub rows: Vec<(usize, Option<usize>, Vec<f64>)>,
}

pub fn load_aux(dir: &Path) -> Result<AuxTable> {
    let path = dir.join(AUX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed(&path, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "example_index" || cols[1] != "group_id" {
        return Err(malformed(&path, "expected header `example_index,group_id,b_0,...`"));
    }
    let num_classes = cols.len() - 2;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = |reason: String| Error::Parse {
            path: path.clone(),
            line: i + 2,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let idx = f[0].parse().map_err(|_| bad(format!("bad index `{}`", f[0])))?;
        let group = if f[1].is_empty() {
            None
        } else {
            Some(f[1].parse().map_err(|_| bad(format!("bad group `{}`", f[1])))?)
        };
        let b = f[2..]
            .iter()
            .map(|s| s.parse().map_err(|_| bad(format!("bad value `{s}`"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((idx, group, b));
    }
    Ok(AuxTable { num_classes, rows })
}

/// `example_index,group,b_0,...`, `2 + C` columns.
pub fn render_aux(table: &AuxTable) -> String {
    let mut out = String::from("example_index,group");
    for c in 0..table.num_classes {
        let _ = write!(out, ",b_{c}");
    }
    out.push('\n');
    for (i, g, b) in &table.rows {
        let _ = write!(out, "{i},{}", g.map(|g| g.to_string()).unwrap_or_default());
        for v in b {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub stage1_epochs: usize,
    pub mode: Stage2Mode,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub sd: f64,
}

/// Groups runs by `(T, mode)`. All runs must agree on every other setting,
/// and each `T` needs both modes over the same seeds.
pub fn ablation(runs: &[RunReport]) -> Result<Vec<AblationRow>> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs given"))?;
    let canon = |r: &RunReport| {
        let mut c = r.config.clone();
        c.run.seed = 0;
        c.dataset.seed = 0;
        c.run.mode = Stage2Mode::OneM;
        c.run.stage1_epochs = 0;
        c
    };
    let reference = canon(first);
    let mut offenders: Vec<String> = runs
        .iter()
        .filter(|r| canon(r) != reference)
        .map(|r| format!("{} (settings differ from {})", r.dir.display(), first.dir.display()))
        .collect();
    offenders.extend(
        runs.iter()
            .filter(|r| r.test_worst_group_accuracy.is_none())
            .map(|r| format!("{} (no test worst-group accuracy)", r.dir.display())),
    );

    let mut cells: BTreeMap<(usize, &str), Vec<(u64, f64)>> = BTreeMap::new();
    for r in runs {
        if let Some(wg) = r.test_worst_group_accuracy {
            cells
                .entry((r.config.run.stage1_epochs, r.config.run.mode.as_str()))
                .or_default()
                .push((r.config.run.seed, wg));
        }
    }
    let ts: BTreeSet<usize> = cells.keys().map(|k| k.0).collect();
    for &t in &ts {
        let seeds = |m: Stage2Mode| -> Option<Vec<u64>> {
            cells.get(&(t, m.as_str())).map(|v| {
                let mut s: Vec<u64> = v.iter().map(|x| x.0).collect();
                s.sort_unstable();
                s
            })
        };
        match (seeds(Stage2Mode::OneM), seeds(Stage2Mode::TwoM)) {
            (Some(a), Some(b)) if a == b => {
                if a.windows(2).any(|w| w[0] == w[1]) {
                    offenders.push(format!("T={t} (duplicate seeds)"));
                }
            }
            (Some(_), Some(_)) => offenders.push(format!("T={t} (one_m and two_m seeds differ)")),
            (None, _) => offenders.push(format!("T={t} (no one_m runs)")),
            (_, None) => offenders.push(format!("T={t} (no two_m runs)")),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::invalid(format!(
            "runs are not a complete ablation: {}",
            offenders.join("; ")
        )));
    }

    let mut rows = Vec::new();
    for &t in &ts {
        for m in [Stage2Mode::OneM, Stage2Mode::TwoM] {
            let mut v = cells[&(t, m.as_str())].clone();
            v.sort_by_key(|x| x.0);
            let accs: Vec<f64> = v.iter().map(|x| x.1).collect();
            let (mean, sd) = mean_sd(&accs);
            rows.push(AblationRow {
                stage1_epochs: t,
                mode: m,
                seeds: v.iter().map(|x| x.0).collect(),
                mean,
                sd,
            });
        }
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("T,mode,runs,mean_worst_group_test_acc,sd_worst_group_test_acc\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.stage1_epochs, r.mode, r.seeds.len(), r.mean, r.sd);
    }
    out
}
