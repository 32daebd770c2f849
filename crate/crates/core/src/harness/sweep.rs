//! Method × seed grids run in parallel, summarized per method.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::experiment::{generate_data, run_on_graphs, write_run, RunReport};
use super::metrics::mean_std;
use crate::error::{Error, Result};
use crate::training::Method;

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub mean_test_auc: f64,
    pub std_test_auc: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Method-major, seed-minor.
    pub reports: Vec<RunReport>,
    pub summary: Vec<MethodSummary>,
}

impl SweepResult {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn reports_for(&self, method: Method) -> impl Iterator<Item = &RunReport> {
        self.reports.iter().filter(move |r| r.method == method)
    }
}

pub fn sweep_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.sweep.n_seeds as u64).map(|i| cfg.sweep.first_seed + i).collect()
}

/// Runs every `(method, seed)` pair of `cfg.sweep` on one shared graph pool.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let graphs = generate_data(cfg)?;
    let jobs: Vec<ExperimentConfig> = cfg
        .sweep
        .methods
        .iter()
        .flat_map(|&method| {
            sweep_seeds(cfg).into_iter().map(move |seed| ExperimentConfig {
                method,
                seed,
                ..cfg.clone()
            })
        })
        .collect();
    let run_all = || -> Result<Vec<RunReport>> {
        jobs.par_iter()
            .map(|job| run_on_graphs(job, &graphs).map(|(r, _)| r))
            .collect()
    };
    let reports = if cfg.threads == 0 {
        run_all()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run_all)?
    };
    let summary = summarize(&reports, &cfg.sweep.methods);
    Ok(SweepResult { reports, summary })
}

pub fn summarize(reports: &[RunReport], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let aucs: Vec<f64> = reports.iter().filter(|r| r.method == method).map(|r| r.test_auc).collect();
            let (mean, std) = mean_std(&aucs);
            MethodSummary {
                method,
                n: aucs.len(),
                mean_test_auc: mean,
                std_test_auc: std,
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[MethodSummary]) -> String {
    let mut out = String::from("method,n_seeds,mean_test_auc,std_test_auc\n");
    for s in summary {
        let _ = writeln!(out, "{},{},{},{}", s.method, s.n, s.mean_test_auc, s.std_test_auc);
    }
    out
}

/// One line per run; the wall-clock column is the only nondeterministic one.
pub fn runs_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("method,seed,test_auc,valid_auc,best_epoch,config_hash,wall_clock_secs\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            r.method, r.seed, r.test_auc, r.valid_auc, r.best_epoch, r.config_hash, r.wall_clock_secs
        );
    }
    out
}

pub fn summary_table(summary: &[MethodSummary]) -> String {
    let mut out = format!("{:<10} {:>5} {:>18}\n", "method", "seeds", "test ROC-AUC");
    for s in summary {
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>9.4} ± {:<6.4}",
            s.method.name(),
            s.n,
            s.mean_test_auc,
            s.std_test_auc
        );
    }
    out
}

/// Writes per-run reports, `sweep_runs.csv` and `sweep_summary.csv` under `out_dir`.
pub fn write_sweep(result: &SweepResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    for r in &result.reports {
        write_run(r)?;
    }
    fs::write(out_dir.join("sweep_runs.csv"), runs_csv(&result.reports))?;
    fs::write(out_dir.join("sweep_summary.csv"), summary_csv(&result.summary))?;
    Ok(())
}

/// Recomputes a summary from a `sweep_runs.csv` file.
pub fn summary_from_runs_csv(text: &str) -> Result<Vec<MethodSummary>> {
    let mut methods: Vec<Method> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::usage(format!("line {}: expected at least 3 fields", i + 1)));
        }
        let method: Method = fields[0].parse()?;
        let auc: f64 = fields[2]
            .parse()
            .map_err(|_| Error::usage(format!("line {}: bad test_auc {:?}", i + 1, fields[2])))?;
        match methods.iter().position(|&m| m == method) {
            Some(j) => values[j].push(auc),
            None => {
                methods.push(method);
                values.push(vec![auc]);
            }
        }
    }
    Ok(methods
        .into_iter()
        .zip(values)
        .map(|(method, aucs)| {
            let (mean, std) = mean_std(&aucs);
            MethodSummary {
                method,
                n: aucs.len(),
                mean_test_auc: mean,
                std_test_auc: std,
            }
        })
        .collect())
}
