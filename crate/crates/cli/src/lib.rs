//! Experiment runner and verification driver for `owa-pto`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod scaling;
pub mod verify;

pub use config::{RunConfig, TaskTag};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, ExperimentSummary};
pub use output::{HistoryRow, ResultRow};
pub use scaling::{run_scaling, ScalingConfig, ScalingRow};
pub use verify::{run_verify, Suite, VerifyOptions, VerifyReport};

use std::path::Path;

use owa_pto::tasks::grid::gen_grid_task;
use owa_pto::tasks::portfolio::gen_portfolio;
use owa_pto::tasks::rank::gen_rank_task;
use owa_pto::tasks::TaskDataset;

/// Generates the dataset a run of `cfg` would train on for `seed`.
pub fn generate_dataset(cfg: &RunConfig, seed: u64) -> CliResult<TaskDataset> {
    Ok(match cfg.task {
        TaskTag::Portfolio => {
            let mut task = cfg.portfolio.experiment(&cfg.train).task;
            task.seed = seed;
            gen_portfolio(&task)?
        }
        TaskTag::Grid => {
            let exp = cfg.grid.experiment(&cfg.train);
            let mut task = exp.task;
            task.seed = seed;
            task.samples = task.samples.max(exp.train + exp.val + exp.test);
            gen_grid_task(&task)?
        }
        TaskTag::Rank => {
            let exp = cfg.rank.experiment(&cfg.train)?;
            let mut task = exp.task;
            task.seed = seed;
            task.queries = task.queries.max(exp.train + exp.val + exp.test);
            gen_rank_task(&task)?
        }
    })
}

/// Writes the dataset for `seed` to `path` in the columnar text format.
pub fn write_dataset(cfg: &RunConfig, seed: u64, path: &Path) -> CliResult<()> {
    let data = generate_dataset(cfg, seed)?;
    let mut buf = Vec::new();
    data.write_to(&mut buf)?;
    output::write_atomic(path, &buf)
}
