//! A single run: data, split, model, training, report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::bilevel::TaskWeights;
use crate::combiners::RotationScalars;
use crate::error::Result;
use crate::models::{HeadSpec, Model};
use crate::tasks::{gen_dataset, split_dataset, SyntheticGraph};
use crate::training::{mix_seed, train, EpochRecord, Method, TraceRow, TrainData, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochRecord>,
    /// Epoch chosen by validation AUC.
    pub best_epoch: usize,
    pub valid_auc: f64,
    /// Test AUC at `best_epoch`.
    pub test_auc: f64,
    pub steps: usize,
    pub final_weights: Option<TaskWeights>,
    pub final_kappa: Option<RotationScalars>,
    pub w_trace: Vec<TraceRow>,
    pub kappa_trace: Vec<TraceRow>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Equality ignoring wall-clock time.
    pub fn same_result(&self, other: &RunReport) -> bool {
        RunReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        } == RunReport {
            wall_clock_secs: 0.0,
            ..other.clone()
        }
    }
}

pub fn generate_data(cfg: &ExperimentConfig) -> Result<Vec<SyntheticGraph>> {
    gen_dataset(cfg.data.seed, &cfg.data.graph_params())
}

/// Fresh model for `cfg`, seeded by the run seed.
pub fn init_model(cfg: &ExperimentConfig) -> Result<Model> {
    let heads: Vec<HeadSpec> = cfg
        .active_aux()
        .iter()
        .map(|t| t.head_spec(cfg.encoder.hidden))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX, 0));
    Model::new(cfg.encoder, &heads, &mut rng)
}

/// Trains on an already generated graph pool and returns the outcome with the report.
pub fn run_on_graphs(cfg: &ExperimentConfig, graphs: &[SyntheticGraph]) -> Result<(RunReport, TrainOutcome)> {
    cfg.validate()?;
    let start = Instant::now();
    let split = split_dataset(graphs, cfg.seed, &cfg.data.split)?;
    let model = init_model(cfg)?;
    let outcome = train(model, TrainData::from(&split), &cfg.train_config(), None)?;
    let best = outcome.best_epoch();
    let report = RunReport {
        method: cfg.method,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        epochs: outcome.epochs.clone(),
        best_epoch: best.epoch,
        valid_auc: best.valid_auc,
        test_auc: best.test_auc,
        steps: outcome.steps,
        final_weights: outcome.final_weights.clone(),
        final_kappa: outcome.final_kappa.clone(),
        w_trace: outcome.w_trace.clone(),
        kappa_trace: outcome.kappa_trace.clone(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, outcome))
}

/// Generates data and trains with `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let graphs = generate_data(cfg)?;
    Ok(run_on_graphs(cfg, &graphs)?.0)
}

/// `step,component,value` rows.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,component,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.step, r.component, r.value));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `report.json`, `trace_w.csv` and `trace_kappa.csv` under the
/// run directory and returns that directory.
pub fn write_run(report: &RunReport) -> Result<PathBuf> {
    let dir = report.config.run_dir();
    fs::create_dir_all(&dir)?;
    report.save(&dir.join("report.json"))?;
    write_trace_csv(&dir.join("trace_w.csv"), &report.w_trace)?;
    write_trace_csv(&dir.join("trace_kappa.csv"), &report.kappa_trace)?;
    Ok(dir)
}

/// Per-epoch table of a report.
pub fn render_report(report: &RunReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "method {}  seed {}  config {}",
        report.method,
        report.seed,
        &report.config_hash[..16]
    )?;
    writeln!(out, "{:>6} {:>12} {:>10} {:>10}", "epoch", "train_loss", "valid_auc", "test_auc")?;
    for e in &report.epochs {
        let marker = if e.epoch == report.best_epoch { " *" } else { "" };
        writeln!(
            out,
            "{:>6} {:>12.5} {:>10.4} {:>10.4}{marker}",
            e.epoch,
            e.train_loss.first().copied().unwrap_or(f64::NAN),
            e.valid_auc,
            e.test_auc
        )?;
    }
    writeln!(out, "test AUC at best validation epoch: {:.4}", report.test_auc)?;
    if let Some(w) = &report.final_weights {
        writeln!(out, "final task weights: {:?}", w.as_slice())?;
    }
    if let Some(k) = &report.final_kappa {
        writeln!(out, "final rotation scalars: kappa_t {:.4}, kappa_aux {:?}", k.kappa_t, k.kappa_aux)?;
    }
    Ok(())
}
