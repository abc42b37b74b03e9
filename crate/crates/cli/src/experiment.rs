//! Trains every (method, seed) pair of a config and writes the result files.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use owa_pto::learn::{EpochRecord, Method};
use owa_pto::tasks::grid::{run_grid_method, GridData};
use owa_pto::tasks::portfolio::{portfolio_regret_table, run_portfolio_method, PortfolioData};
use owa_pto::tasks::rank::{run_rank_method, RankData};
use owa_pto::tasks::TrainedModel;

use crate::config::{RunConfig, TaskTag};
use crate::error::{CliError, CliResult};
use crate::output::{preamble, write_csv, HistoryRow, ResultRow};

/// One training run. For ranking the fairness weight is part of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunUnit {
    pub method: Method,
    pub seed: u64,
    pub lambda: Option<f64>,
}

impl RunUnit {
    /// Value of the `method` column.
    pub fn label(&self) -> String {
        match self.lambda {
            Some(l) => format!("{}@{l}", self.method),
            None => self.method.name().to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub unit: RunUnit,
    pub rows: Vec<ResultRow>,
    pub history: Vec<HistoryRow>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: Vec<RunOutput>,
    /// Files written, summary last.
    pub files: Vec<PathBuf>,
}

impl ExperimentSummary {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.runs.iter().flat_map(|r| r.rows.iter())
    }
}

pub fn run_units(cfg: &RunConfig) -> CliResult<Vec<RunUnit>> {
    let methods = cfg.parsed_methods()?;
    let mut units = Vec::new();
    for &seed in &cfg.seeds {
        for &method in &methods {
            if cfg.task == TaskTag::Rank {
                for &l in &cfg.rank.lambdas {
                    units.push(RunUnit {
                        method,
                        seed,
                        lambda: Some(l),
                    });
                }
            } else {
                units.push(RunUnit {
                    method,
                    seed,
                    lambda: None,
                });
            }
        }
    }
    Ok(units)
}

struct RowSink<'a> {
    task: &'a str,
    label: String,
    seed: u64,
    rows: Vec<ResultRow>,
}

impl RowSink<'_> {
    fn push(&mut self, split: &str, metric: &str, value: f64) {
        self.rows.push(ResultRow {
            task: self.task.to_string(),
            method: self.label.clone(),
            seed: self.seed,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
            wall_time: 0.0,
        });
    }

    fn push_training(&mut self, trained: &TrainedModel) {
        self.push("train", "best_epoch", trained.best_epoch as f64);
        if let Some(r) = trained.history.iter().find(|r| r.epoch == trained.best_epoch) {
            self.push("train", "loss", r.train_loss);
            self.push("val", "selection_metric", r.val_metric);
        }
    }
}

/// Trains and evaluates one unit.
pub fn execute_unit(cfg: &RunConfig, unit: RunUnit) -> CliResult<RunOutput> {
    let start = Instant::now();
    let task = cfg.task.name();
    let train_cfg = cfg.train_config(unit.method, unit.seed);
    let mut sink = RowSink {
        task,
        label: unit.label(),
        seed: unit.seed,
        rows: Vec::new(),
    };
    let history: Vec<EpochRecord> = match cfg.task {
        TaskTag::Portfolio => {
            let exp = cfg.portfolio.experiment(&cfg.train);
            let data = PortfolioData::prepare(&exp, unit.seed)?;
            let out = run_portfolio_method(&exp, &data, unit.method, &train_cfg)?;
            let table = portfolio_regret_table(
                &out.trained.model,
                &data.test,
                &data.test_refs,
                &data.weights,
                exp.task.m,
                exp.task.n,
            )?;
            sink.push("test", "regret_pct", table.mean_percent());
            sink.push("test", "regret", table.mean_regret());
            sink.push("test", "max_regret_pct", table.max_percent());
            sink.push_training(&out.trained);
            out.trained.history
        }
        TaskTag::Grid => {
            let exp = cfg.grid.experiment(&cfg.train);
            let data = GridData::prepare(&exp, unit.seed)?;
            let out = run_grid_method(&exp, &data, unit.method, &train_cfg)?;
            sink.push("test", "regret_pct", out.test.aggregate_pct);
            sink.push("test", "worst_species_regret_pct", out.test.worst_species_pct());
            for (k, v) in out.test.species_pct.iter().enumerate() {
                sink.push("test", &format!("species{k}_regret_pct"), *v);
            }
            sink.push_training(&out.trained);
            out.trained.history
        }
        TaskTag::Rank => {
            let exp = cfg.rank.experiment(&cfg.train)?;
            let data = RankData::prepare(&exp, unit.seed)?;
            let lambda = unit.lambda.expect("rank units carry lambda");
            let out = run_rank_method(&exp, &data, lambda, &train_cfg)?;
            sink.push("test", "utility", out.test.utility);
            sink.push("test", "violation", out.test.violation);
            sink.push("test", "objective", out.test.objective);
            sink.push_training(&out.trained);
            out.trained.history
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let mut rows = sink.rows;
    for r in &mut rows {
        if !r.value.is_finite() {
            return Err(CliError::NonFiniteMetric {
                method: r.method.clone(),
                seed: r.seed,
                metric: r.metric.clone(),
            });
        }
        r.wall_time = wall;
    }
    let history = history
        .into_iter()
        .map(|h| HistoryRow {
            task: task.to_string(),
            method: unit.label(),
            seed: unit.seed,
            epoch: h.epoch,
            train_loss: h.train_loss,
            val_metric: h.val_metric,
        })
        .collect();
    Ok(RunOutput { unit, rows, history })
}

/// Runs `units` on up to `jobs` threads; results keep the order of `units`.
fn execute_all(cfg: &RunConfig, units: &[RunUnit]) -> CliResult<Vec<RunOutput>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CliResult<RunOutput>>>> =
        Mutex::new((0..units.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(units.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= units.len() {
                    break;
                }
                let out = execute_unit(cfg, units[i]);
                let failed = out.is_err();
                slots.lock().expect("no poisoned lock")[i] = Some(out);
                if failed {
                    next.store(units.len(), Ordering::SeqCst);
                }
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .flatten()
        .collect()
}

fn run_file(out: &Path, task: &str, unit: &RunUnit, suffix: &str) -> PathBuf {
    out.join(format!("{task}_{}_seed{}{suffix}.csv", unit.label(), unit.seed))
}

/// Trains every unit of `cfg` and writes, per run, a result file and an
/// epoch history, plus a merged `summary.csv`.
pub fn run_experiment(cfg: &RunConfig) -> CliResult<ExperimentSummary> {
    cfg.validate()?;
    let units = run_units(cfg)?;
    let runs = execute_all(cfg, &units)?;
    let config_toml = cfg.to_toml();
    let task = cfg.task.name();
    let mut files = Vec::new();
    for run in &runs {
        let head = preamble(&[run.unit.seed], &config_toml);
        let path = run_file(&cfg.out, task, &run.unit, "");
        write_csv(&path, &head, &run.rows)?;
        files.push(path);
        let path = run_file(&cfg.out, task, &run.unit, "_history");
        write_csv(&path, &head, &run.history)?;
        files.push(path);
    }
    let all: Vec<ResultRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let path = cfg.out.join("summary.csv");
    write_csv(&path, &preamble(&cfg.seeds, &config_toml), &all)?;
    files.push(path);
    Ok(ExperimentSummary { runs, files })
}

/// Mean of `metric` on the test split per method label, in first-seen order.
pub fn test_means(rows: &[ResultRow], metric: &str) -> Vec<(String, f64)> {
    let mut acc: Vec<(String, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.split == "test" && r.metric == metric) {
        match acc.iter_mut().find(|a| a.0 == r.method) {
            Some(a) => {
                a.1 += r.value;
                a.2 += 1;
            }
            None => acc.push((r.method.clone(), r.value, 1)),
        }
    }
    acc.into_iter().map(|(m, s, k)| (m, s / k as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use owa_pto::tasks::rank::RANK_METHOD;

    #[test]
    fn rank_units_expand_lambdas() {
        let mut cfg = RunConfig::for_task(TaskTag::Rank);
        cfg.seeds = vec![4, 5];
        let units = run_units(&cfg).unwrap();
        assert_eq!(units.len(), 2 * cfg.rank.lambdas.len());
        assert_eq!(units[1].label(), format!("spo_rank@{}", cfg.rank.lambdas[1]));
        assert_eq!(units[0].method, RANK_METHOD);
    }

    #[test]
    fn test_means_group_by_method() {
        let row = |m: &str, v: f64| ResultRow {
            task: "grid".into(),
            method: m.into(),
            seed: 0,
            split: "test".into(),
            metric: "regret_pct".into(),
            value: v,
            wall_time: 0.0,
        };
        let rows = [row("a", 1.0), row("b", 4.0), row("a", 3.0)];
        assert_eq!(test_means(&rows, "regret_pct"), vec![("a".into(), 2.0), ("b".into(), 4.0)]);
    }
}
