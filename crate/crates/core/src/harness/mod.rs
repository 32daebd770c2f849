//! Configuration, experiment orchestration, seed sweeps and the
//! self-check suite behind the command-line tool.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunReport};
pub use metrics::roc_auc;
pub use sweep::{sweep, SweepResult};
pub use verify::{verify, VerifyOptions, VerifyReport};
