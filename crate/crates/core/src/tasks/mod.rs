//! Synthetic graph data, task losses, dataset splits and the quadratic
//! bi-level testbed.

pub mod graph;
pub mod losses;
pub mod quadratic;
pub mod split;

pub use graph::{gen_dataset, read_jsonl, write_jsonl, GraphGenParams, SyntheticGraph};
pub use losses::{loss_am, loss_ep, loss_ig, loss_mp, loss_target, predict, AuxSettings, AuxTask, ModelTape};
pub use quadratic::{quadratic_oracle_hypergrad, QuadraticBilevelProblem, QuadraticForm};
pub use split::{split_dataset, DatasetSplit, SplitFractions};
