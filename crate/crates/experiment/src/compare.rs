//! Aligning metric traces from several runs on a common query-count grid.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use infotuple::metrics::MetricSample;

use crate::run::{read_metrics, MANIFEST, METRICS_FILE};
use crate::spec::ExperimentSpec;
use crate::ExperimentError;

pub const COMPARE_CSV_HEADER: &str =
    "label,normalized_count,seeds,mean_tau,mean_tau_se,holdout_acc,holdout_acc_se,coherence,coherence_se";

/// The per-seed metric traces of one run directory.
#[derive(Debug, Clone)]
pub struct RunTraces {
    pub label: String,
    pub seeds: Vec<Vec<MetricSample>>,
}

/// Mean and standard error of the mean (sample standard deviation over √n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, stderr })
    }
}

/// Standard error of a difference of two independent means.
pub fn pooled_stderr(a: Stat, b: Stat) -> f64 {
    a.stderr.hypot(b.stderr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub normalized_count: u64,
    pub seeds: usize,
    pub mean_tau: Option<Stat>,
    pub holdout_accuracy: Option<Stat>,
    pub coherence: Option<Stat>,
}

impl Row {
    pub fn csv(&self) -> String {
        let stat =
            |s: Option<Stat>| s.map_or(",".to_string(), |s| format!("{},{}", s.mean, s.stderr));
        format!(
            "{},{},{},{},{},{}",
            self.label,
            self.normalized_count,
            self.seeds,
            stat(self.mean_tau),
            stat(self.holdout_accuracy),
            stat(self.coherence)
        )
    }
}

/// Reads a run directory: its manifest label and every `seed-*` metrics file.
/// A directory holding a metrics file directly is read as a single seed.
pub fn load_run(dir: &Path) -> Result<RunTraces, ExperimentError> {
    let label = match fs::read_to_string(dir.join(MANIFEST)) {
        Ok(text) => ExperimentSpec::from_toml(&text)
            .map_err(|e| ExperimentError::Schema(format!("{}: {e}", dir.join(MANIFEST).display())))?
            .label(),
        Err(_) => dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        ),
    };
    let mut files: Vec<PathBuf> = Vec::new();
    if dir.join(METRICS_FILE).is_file() {
        files.push(dir.join(METRICS_FILE));
    } else {
        let mut seed_dirs: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with("seed-"))
            })
            .collect();
        seed_dirs.sort();
        files.extend(seed_dirs.into_iter().map(|d| d.join(METRICS_FILE)));
    }
    if files.is_empty() {
        return Err(ExperimentError::Schema(format!(
            "{}: no metric traces found",
            dir.display()
        )));
    }
    let seeds = files
        .iter()
        .map(|f| read_metrics(f))
        .collect::<Result<_, _>>()?;
    Ok(RunTraces { label, seeds })
}

/// The value of `metric` at `count` for one seed; the latest sample wins.
fn at_count(
    trace: &[MetricSample],
    count: u64,
    metric: fn(&MetricSample) -> Option<f64>,
) -> Option<f64> {
    trace
        .iter()
        .rev()
        .find(|s| s.normalized_query_count == count)
        .and_then(metric)
}

/// Rows for every run at every normalized count present in all seeds of all runs.
type Column = fn(&MetricSample) -> Option<f64>;

pub fn align(runs: &[RunTraces]) -> Result<Vec<Row>, ExperimentError> {
    let mut grid: Option<BTreeSet<u64>> = None;
    for trace in runs.iter().flat_map(|r| &r.seeds) {
        let counts: BTreeSet<u64> = trace.iter().map(|s| s.normalized_query_count).collect();
        grid = Some(match grid {
            None => counts,
            Some(g) => g.intersection(&counts).copied().collect(),
        });
    }
    let grid = grid.unwrap_or_default();
    if grid.is_empty() {
        return Err(ExperimentError::Schema(
            "runs share no normalized query count".into(),
        ));
    }
    let metrics: [(&str, Column); 3] = [
        ("mean_tau", |s| s.mean_tau),
        ("holdout_acc", |s| s.holdout_accuracy),
        ("coherence", |s| s.coherence),
    ];
    let mut rows = Vec::new();
    for run in runs {
        for &count in &grid {
            let mut stats = [None; 3];
            for (slot, (name, metric)) in stats.iter_mut().zip(metrics) {
                let values: Vec<f64> = run
                    .seeds
                    .iter()
                    .filter_map(|t| at_count(t, count, metric))
                    .collect();
                if !values.is_empty() && values.len() != run.seeds.len() {
                    return Err(ExperimentError::Schema(format!(
                        "{}: column {name} is missing for some seeds at count {count}",
                        run.label
                    )));
                }
                *slot = Stat::of(&values);
            }
            rows.push(Row {
                label: run.label.clone(),
                normalized_count: count,
                seeds: run.seeds.len(),
                mean_tau: stats[0],
                holdout_accuracy: stats[1],
                coherence: stats[2],
            });
        }
    }
    Ok(rows)
}

pub fn write_table(w: &mut impl Write, rows: &[Row]) -> std::io::Result<()> {
    writeln!(w, "{COMPARE_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

/// Loads every directory, aligns them and writes the table to `output`.
pub fn compare_dirs(dirs: &[PathBuf], output: &Path) -> Result<Vec<Row>, ExperimentError> {
    let runs = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = align(&runs)?;
    let mut buf = Vec::new();
    write_table(&mut buf, &rows)?;
    fs::write(output, buf)?;
    Ok(rows)
}
