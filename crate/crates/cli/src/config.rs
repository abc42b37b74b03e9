//! Run configuration, read from TOML. Every field has a default; a file only
//! needs `task` and `methods`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use owa_pto::learn::{Method, TrainConfig};
use owa_pto::solvers::MoreauPgdConfig;
use owa_pto::tasks::grid::{GridExperiment, GridTaskConfig};
use owa_pto::tasks::portfolio::{PortfolioExperiment, PortfolioSolverConfig, PortfolioTaskConfig};
use owa_pto::tasks::rank::{RankExperiment, RankTaskConfig, ViolationMean};
use owa_pto::tasks::{default_hyper, TaskKind};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Portfolio,
    Grid,
    Rank,
}

impl TaskTag {
    pub fn kind(self) -> TaskKind {
        match self {
            TaskTag::Portfolio => TaskKind::Portfolio,
            TaskTag::Grid => TaskKind::Grid,
            TaskTag::Rank => TaskKind::Rank,
        }
    }

    pub fn name(self) -> &'static str {
        self.kind().name()
    }

    /// Methods that can be trained on this task.
    pub fn methods(self) -> &'static [Method] {
        match self {
            TaskTag::Portfolio => &[Method::TwoStage, Method::Uws, Method::OwaQp, Method::OwaMoreau],
            TaskTag::Grid => &[Method::TwoStage, Method::Uws, Method::SurrogateLp],
            TaskTag::Rank => &[Method::SpoRank],
        }
    }
}

impl FromStr for TaskTag {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "portfolio" => Ok(TaskTag::Portfolio),
            "grid" => Ok(TaskTag::Grid),
            "rank" => Ok(TaskTag::Rank),
            _ => Err(CliError::Config(format!("unknown task `{s}`"))),
        }
    }
}

/// Training schedule. Unset fields fall back to the task and method defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioSection {
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    pub noise: f64,
    pub factor_low: f64,
    pub factor_high: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub history: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub moreau_beta: f64,
    pub moreau_step: f64,
    /// Fixed iteration budget of the training forward pass; unset picks it from `m`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moreau_iters: Option<usize>,
    pub qp_epsilon: f64,
    pub uws_epsilon: f64,
    /// Norm cap on the fixed-point cotangent; 0 disables it.
    pub grad_clip: f64,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        let e = PortfolioExperiment::default();
        Self {
            n: e.task.n,
            m: e.task.m,
            samples: e.task.samples,
            noise: e.task.noise,
            factor_low: e.task.factor_low,
            factor_high: e.task.factor_high,
            feature_dim: e.task.feature_dim,
            feature_noise: e.task.feature_noise,
            history: e.task.history,
            train: e.train,
            val: e.val,
            test: e.test,
            moreau_beta: e.solver.moreau.beta,
            moreau_step: e.solver.moreau.step,
            moreau_iters: None,
            qp_epsilon: e.solver.qp_epsilon,
            uws_epsilon: e.solver.uws_epsilon,
            grad_clip: e.solver.grad_clip.unwrap_or(0.0),
        }
    }
}

impl PortfolioSection {
    pub fn experiment(&self, train: &TrainSection) -> PortfolioExperiment {
        let d = PortfolioExperiment::default();
        let mut moreau = MoreauPgdConfig::training(self.m);
        moreau.beta = self.moreau_beta;
        moreau.step = self.moreau_step;
        if let Some(k) = self.moreau_iters {
            moreau.max_iters = k;
        }
        PortfolioExperiment {
            task: PortfolioTaskConfig {
                n: self.n,
                m: self.m,
                samples: self.samples,
                noise: self.noise,
                factor_low: self.factor_low,
                factor_high: self.factor_high,
                feature_dim: self.feature_dim,
                feature_noise: self.feature_noise,
                history: self.history,
                seed: 0,
            },
            train: self.train,
            val: self.val,
            test: self.test,
            epochs: train.epochs.unwrap_or(d.epochs),
            batch_size: train.batch_size.unwrap_or(d.batch_size),
            solver: PortfolioSolverConfig {
                moreau,
                qp_epsilon: self.qp_epsilon,
                uws_epsilon: self.uws_epsilon,
                grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub rows: usize,
    pub cols: usize,
    /// One `[land, water, rock]` speed triple per species.
    pub speeds: Vec<[f64; 3]>,
    pub jitter: f64,
    pub smoothing: usize,
    pub feature_noise: f64,
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub lambda_bb: f64,
    pub surrogate_mse: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let e = GridExperiment::default();
        Self {
            rows: e.task.rows,
            cols: e.task.cols,
            speeds: e.task.speeds,
            jitter: e.task.jitter,
            smoothing: e.task.smoothing,
            feature_noise: e.task.feature_noise,
            samples: e.task.samples,
            train: e.train,
            val: e.val,
            test: e.test,
            lambda_bb: e.lambda_bb,
            surrogate_mse: e.surrogate_mse,
        }
    }
}

impl GridSection {
    pub fn experiment(&self, train: &TrainSection) -> GridExperiment {
        let d = GridExperiment::default();
        GridExperiment {
            task: GridTaskConfig {
                rows: self.rows,
                cols: self.cols,
                speeds: self.speeds.clone(),
                jitter: self.jitter,
                smoothing: self.smoothing,
                feature_noise: self.feature_noise,
                samples: self.samples,
                seed: 0,
            },
            train: self.train,
            val: self.val,
            test: self.test,
            epochs: train.epochs.unwrap_or(d.epochs),
            batch_size: train.batch_size.unwrap_or(d.batch_size),
            lambda_bb: self.lambda_bb,
            surrogate_mse: self.surrogate_mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSection {
    pub items: usize,
    pub item_features: usize,
    pub groups: usize,
    pub queries: usize,
    pub noise: f64,
    pub quality_feature: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub lambdas: Vec<f64>,
    pub beta0: f64,
    pub train_iters: usize,
    pub eval_iters: usize,
    /// `groups` or `items`.
    pub violation_mean: String,
}

impl Default for RankSection {
    fn default() -> Self {
        let e = RankExperiment::default();
        Self {
            items: e.task.items,
            item_features: e.task.item_features,
            groups: e.task.groups,
            queries: e.task.queries,
            noise: e.task.noise,
            quality_feature: e.task.quality_feature,
            train: e.train,
            val: e.val,
            test: e.test,
            lambdas: e.lambdas,
            beta0: e.beta0,
            train_iters: e.train_iters,
            eval_iters: e.eval_iters,
            violation_mean: "groups".into(),
        }
    }
}

impl RankSection {
    pub fn experiment(&self, train: &TrainSection) -> CliResult<RankExperiment> {
        let d = RankExperiment::default();
        let violation_mean = ViolationMean::from_str(&self.violation_mean)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(RankExperiment {
            task: RankTaskConfig {
                items: self.items,
                item_features: self.item_features,
                groups: self.groups,
                queries: self.queries,
                noise: self.noise,
                quality_feature: self.quality_feature,
                seed: 0,
            },
            train: self.train,
            val: self.val,
            test: self.test,
            epochs: train.epochs.unwrap_or(d.epochs),
            batch_size: train.batch_size.unwrap_or(d.batch_size),
            lambdas: self.lambdas.clone(),
            beta0: self.beta0,
            train_iters: self.train_iters,
            eval_iters: self.eval_iters,
            violation_mean,
        })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskTag,
    pub methods: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Runs executed concurrently, one thread each.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub portfolio: PortfolioSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub rank: RankSection,
}

impl RunConfig {
    /// Default configuration for `task` with all of its methods.
    pub fn for_task(task: TaskTag) -> Self {
        Self {
            task,
            methods: task.methods().iter().map(|m| m.name().to_string()).collect(),
            seeds: default_seeds(),
            out: default_out(),
            jobs: default_jobs(),
            train: TrainSection::default(),
            portfolio: PortfolioSection::default(),
            grid: GridSection::default(),
            rank: RankSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parsed method list, in config order.
    pub fn parsed_methods(&self) -> CliResult<Vec<Method>> {
        let allowed = self.task.methods();
        self.methods
            .iter()
            .map(|s| {
                let m = Method::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
                if !allowed.contains(&m) {
                    return Err(CliError::Config(format!(
                        "method `{s}` does not apply to task `{}`",
                        self.task.name()
                    )));
                }
                Ok(m)
            })
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.methods.is_empty() {
            return Err(CliError::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        let methods = self.parsed_methods()?;
        for m in methods {
            self.train_config(m, 0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        match self.task {
            TaskTag::Portfolio => self.portfolio.experiment(&self.train).task.validate(),
            TaskTag::Grid => self.grid.experiment(&self.train).task.validate(),
            TaskTag::Rank => {
                let exp = self.rank.experiment(&self.train)?;
                if exp.lambdas.is_empty() || exp.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return Err(CliError::Config("rank lambdas must be nonempty and lie in [0, 1]".into()));
                }
                exp.task.validate()
            }
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Training settings of one (method, seed) run.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let (lr, mse) = default_hyper(self.task.kind(), method);
        let (epochs, batch_size) = match self.task {
            TaskTag::Portfolio => {
                let e = self.portfolio.experiment(&self.train);
                (e.epochs, e.batch_size)
            }
            TaskTag::Grid => {
                let e = self.grid.experiment(&self.train);
                (e.epochs, e.batch_size)
            }
            TaskTag::Rank => {
                let d = RankExperiment::default();
                (
                    self.train.epochs.unwrap_or(d.epochs),
                    self.train.batch_size.unwrap_or(d.batch_size),
                )
            }
        };
        TrainConfig {
            lr: self.train.lr.unwrap_or(lr),
            batch_size,
            epochs,
            seed,
            mse_weight: if method == Method::TwoStage {
                mse
            } else {
                self.train.mse_weight.unwrap_or(mse)
            },
        }
    }
}
