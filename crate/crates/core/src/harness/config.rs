//! Experiment configuration: one JSON document, every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bilevel::BiLevelConfig;
use crate::combiners::KappaConfig;
use crate::error::{Error, Result};
use crate::models::EncoderConfig;
use crate::tasks::{AuxSettings, AuxTask, GraphGenParams, SplitFractions};
use crate::training::{Method, OptimConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Seed of the generated graph pool; the run seed only drives the split,
    /// initialization and batch order.
    pub seed: u64,
    pub n_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: f64,
    pub split: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GraphGenParams::default();
        DataConfig {
            seed: 0,
            n_graphs: g.n_graphs,
            min_nodes: g.min_nodes,
            max_nodes: g.max_nodes,
            edge_prob: g.edge_prob,
            split: SplitFractions::default(),
        }
    }
}

impl DataConfig {
    pub fn graph_params(&self) -> GraphGenParams {
        GraphGenParams {
            n_graphs: self.n_graphs,
            min_nodes: self.min_nodes,
            max_nodes: self.max_nodes,
            edge_prob: self.edge_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub n_seeds: usize,
    pub first_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            methods: Method::ALL.to_vec(),
            n_seeds: 10,
            first_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub data: DataConfig,
    pub aux: Vec<AuxTask>,
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub bilevel: BiLevelConfig,
    pub kappa: KappaConfig,
    pub aux_settings: AuxSettings,
    pub symmetric_scale: bool,
    pub target_train_limit: Option<usize>,
    pub sweep: SweepConfig,
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; 0 uses every core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Ft,
            seed: 0,
            data: DataConfig::default(),
            aux: vec![AuxTask::Am, AuxTask::Ep, AuxTask::Ig, AuxTask::Mp],
            encoder: EncoderConfig::default(),
            optim: OptimConfig::default(),
            bilevel: BiLevelConfig::default(),
            kappa: KappaConfig::default(),
            aux_settings: AuxSettings::default(),
            symmetric_scale: false,
            target_train_limit: None,
            sweep: SweepConfig::default(),
            out_dir: PathBuf::from("."),
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Usage(m) => Error::Config(m),
            other => other,
        };
        self.data.graph_params().validate().map_err(as_config)?;
        self.data.split.validate().map_err(as_config)?;
        self.encoder.validate().map_err(as_config)?;
        self.optim.validate()?;
        self.bilevel.validate()?;
        self.kappa.validate()?;
        self.aux_settings.validate().map_err(as_config)?;
        let mut seen = self.aux.clone();
        seen.sort_by_key(|t| t.name());
        seen.dedup();
        if seen.len() != self.aux.len() {
            return Err(Error::Config(format!("duplicate auxiliary task in {:?}", self.aux)));
        }
        if self.target_train_limit == Some(0) || self.target_train_limit == Some(1) {
            return Err(Error::Config("target_train_limit must be at least 2".into()));
        }
        if self.sweep.n_seeds == 0 {
            return Err(Error::Config("sweep.n_seeds must be at least 1".into()));
        }
        if self.sweep.methods.is_empty() {
            return Err(Error::Config("sweep.methods is empty".into()));
        }
        Ok(())
    }

    /// Auxiliary tasks actually trained; fine-tuning allocates none.
    pub fn active_aux(&self) -> Vec<AuxTask> {
        if self.method.uses_aux() {
            self.aux.clone()
        } else {
            Vec::new()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            aux: self.active_aux(),
            optim: self.optim,
            bilevel: self.bilevel,
            kappa: self.kappa,
            aux_settings: self.aux_settings,
            symmetric_scale: self.symmetric_scale,
            target_train_limit: self.target_train_limit,
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON of everything that affects results.
    /// Output location, thread count and the sweep grid are excluded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            for key in ["out_dir", "threads", "sweep"] {
                obj.remove(key);
            }
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Short form of [`hash`](Self::hash) used for run directories.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join("runs").join(self.short_hash())
    }
}

/// Markdown reference of every option and its default.
pub fn reference_doc() -> String {
    let defaults = ExperimentConfig::default().to_json_pretty();
    format!(
        "# Configuration reference\n\n\
         Every key is optional; missing keys take the defaults below and unknown keys are rejected.\n\
         Command-line flags override values from the file.\n\n```json\n{defaults}\n```\n"
    )
}
