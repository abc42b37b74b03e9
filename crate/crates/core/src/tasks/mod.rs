//! Synthetic benchmark tasks, their training objectives and evaluation.

mod dataset;
mod features;
pub mod grid;
pub mod portfolio;
pub mod rank;
mod regret;
mod run;

pub use dataset::{Splits, TaskDataset, TaskKind, DATASET_FORMAT};
pub use features::RandomFeatureMap;
pub use regret::{eval_regret_suite, RegretRow, RegretTable, Sense};
pub use run::{default_hyper, fit, TrainedModel};
