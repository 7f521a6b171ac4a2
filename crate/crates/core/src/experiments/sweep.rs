//! Parallel sweeps and the comparison tables built from their run records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, SweepGrid};
use crate::experiments::record::{emit_metrics, load_record, RunRecord};
use crate::experiments::run::run_experiment;
use crate::training::Method;

pub struct SweepRun {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    /// The record, or the error message of a failed run.
    pub outcome: std::result::Result<RunRecord, String>,
}

fn run_one(config: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    let artifacts = run_experiment(config)?;
    emit_metrics(&artifacts.record, Some(&artifacts.samples), dir)?;
    artifacts.checkpoint.save(dir.join("checkpoint.sdmc"))?;
    Ok(artifacts.record)
}

/// Runs every grid point on `jobs` worker threads. Each run writes only its
/// own directory under `out`; failures are recorded in `error.txt` there and
/// do not stop the sweep. `summary.csv` and `report.csv` are written once all
/// runs finish.
pub fn run_sweep(grid: &SweepGrid, out: impl AsRef<Path>, jobs: usize) -> Result<Vec<SweepRun>> {
    let out = out.as_ref();
    let configs = grid.expand()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        configs
            .into_par_iter()
            .map(|config| {
                let dir = out.join(config.run_name());
                let outcome = run_one(&config, &dir).map_err(|e| {
                    let msg = format!("error[{}]: {e}", e.category());
                    let _ = std::fs::create_dir_all(&dir);
                    let _ = std::fs::write(dir.join("error.txt"), &msg);
                    msg
                });
                SweepRun { config, dir, outcome }
            })
            .collect()
    });
    let path = out.join("summary.csv");
    std::fs::write(&path, summary_csv(&runs)).map_err(|e| Error::io(&path, e))?;
    let records: Vec<RunRecord> = runs.iter().filter_map(|r| r.outcome.clone().ok()).collect();
    let path = out.join("report.csv");
    std::fs::write(&path, report_csv(&aggregate(&records))).map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per run, in grid order.
pub fn summary_csv(runs: &[SweepRun]) -> String {
    let mut s = String::from(
        "run,method,sparsity,prune_rate,seed,frechet,kid,kid_std_error,params_ratio,train_flops_ratio,test_flops_ratio,status\n",
    );
    for run in runs {
        let c = &run.config;
        let _ = write!(
            s,
            "{},{},{},{},{},",
            c.run_name(),
            c.method,
            c.sparsity,
            c.prune_rate,
            c.seed
        );
        match &run.outcome {
            Ok(r) => {
                let q = r.quality.as_ref();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},ok",
                    opt(q.map(|q| q.frechet)),
                    opt(q.map(|q| q.kid)),
                    opt(q.map(|q| q.kid_std_error)),
                    r.params.ratio,
                    r.flops.train_ratio,
                    r.flops.test_ratio
                );
            }
            Err(e) => {
                let _ = writeln!(s, ",,,,,,\"{}\"", e.replace('"', "'"));
            }
        }
    }
    s
}

/// Seed-aggregated results for one (method, S, p) cell. `prune_rate` is
/// `None` for methods that do not explore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub sparsity: f64,
    pub prune_rate: Option<f64>,
    pub seeds: Vec<u64>,
    /// Per-seed Fréchet distances, aligned with `seeds`; `None` if not computed.
    pub frechet: Vec<Option<f64>>,
    pub frechet_median: Option<f64>,
    pub frechet_mean: Option<f64>,
    pub kid_mean: Option<f64>,
    pub params_ratio: f64,
    pub train_flops_ratio: f64,
    pub test_flops_ratio: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Groups records by method, S and p (p only for dynamic methods).
pub fn aggregate(records: &[RunRecord]) -> Vec<ReportRow> {
    let rank = |m: Method| match m {
        Method::Dense => 0,
        Method::Static => 1,
        Method::RigL => 2,
        Method::MagRan => 3,
    };
    let mut groups: BTreeMap<(u8, u64, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let c = &r.config;
        let p = if c.method.dynamic().is_some() {
            c.prune_rate
        } else {
            -1.0
        };
        // Sorting key: S ascending, p descending.
        let key = (rank(c.method), c.sparsity.to_bits(), (-p).to_bits() ^ (1 << 63));
        groups.entry(key).or_default().push(r);
    }
    let mut rows: Vec<ReportRow> = groups
        .into_values()
        .map(|mut group| {
            group.sort_by_key(|r| r.config.seed);
            let c = &group[0].config;
            let frechet: Vec<Option<f64>> = group.iter().map(|r| r.frechet()).collect();
            let finite: Vec<f64> = frechet.iter().flatten().copied().collect();
            let kids: Vec<f64> = group.iter().filter_map(|r| r.quality.as_ref().map(|q| q.kid)).collect();
            ReportRow {
                method: c.method,
                sparsity: c.sparsity,
                prune_rate: c.method.dynamic().map(|_| c.prune_rate),
                seeds: group.iter().map(|r| r.config.seed).collect(),
                frechet_median: median(&finite),
                frechet_mean: mean(&finite),
                frechet,
                kid_mean: mean(&kids),
                params_ratio: mean(&group.iter().map(|r| r.params.ratio).collect::<Vec<_>>()).unwrap(),
                train_flops_ratio: mean(&group.iter().map(|r| r.flops.train_ratio).collect::<Vec<_>>()).unwrap(),
                test_flops_ratio: mean(&group.iter().map(|r| r.flops.test_ratio).collect::<Vec<_>>()).unwrap(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        rank(a.method)
            .cmp(&rank(b.method))
            .then(a.sparsity.total_cmp(&b.sparsity))
            .then(b.prune_rate.unwrap_or(0.0).total_cmp(&a.prune_rate.unwrap_or(0.0)))
    });
    rows
}

/// Comparison table with cost columns as multiples of the dense model.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "method,sparsity,prune_rate,runs,frechet_median,frechet_mean,kid_mean,params_x,train_flops_x,test_flops_x,frechet_per_seed\n",
    );
    for r in rows {
        let per_seed: Vec<String> = r
            .seeds
            .iter()
            .zip(&r.frechet)
            .map(|(seed, f)| format!("{seed}:{}", opt(*f)))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{}",
            r.method,
            r.sparsity,
            opt(r.prune_rate),
            r.seeds.len(),
            opt(r.frechet_median),
            opt(r.frechet_mean),
            opt(r.kid_mean),
            r.params_ratio,
            r.train_flops_ratio,
            r.test_flops_ratio,
            per_seed.join(";")
        );
    }
    s
}

/// Loads every `*/run.json` under a sweep directory.
pub fn collect_records(dir: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(dir.to_path_buf())
        } else {
            Error::io(dir, e)
        }
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path().join("run.json")))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(load_record).collect()
}

/// Aggregates a finished sweep directory and writes its `report.csv`.
pub fn report(dir: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let dir = dir.as_ref();
    let rows = aggregate(&collect_records(dir)?);
    let path = dir.join("report.csv");
    std::fs::write(&path, report_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
