//! Fair learning to rank: item relevance is predicted per query and turned
//! into a stochastic ranking policy that trades utility against fairness of
//! group exposure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{spo_plus_rank_loss_and_grad, RankSpoInstance};
use crate::error::{check_len, Error, Result};
use crate::learn::{Method, Objective, Predictor, PredictorSpec, Sample, TrainConfig};
use crate::owa::fair_gini_weights;
use crate::solvers::{
    dcg_position_bias, fair_ranking_objective, solve_fair_ranking_fw, FairRankingConfig, GroupStructure,
    PositionBias, RankingPolicy,
};

use super::dataset::{TaskDataset, TaskKind};
use super::run::{fit, TrainedModel};

/// Row and column sums accepted by [`eval_ranking`].
pub const BISTOCHASTIC_TOL: f64 = 1e-6;

/// Normalization of the mean exposure in the fairness violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViolationMean {
    /// Sum of group exposures divided by the number of groups.
    #[default]
    Groups,
    /// Sum of group exposures divided by the number of items.
    Items,
}

impl std::str::FromStr for ViolationMean {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "groups" => Ok(Self::Groups),
            "items" => Ok(Self::Items),
            _ => Err(Error::InvalidArgument(format!("unknown violation mean `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTaskConfig {
    pub items: usize,
    pub item_features: usize,
    pub groups: usize,
    pub queries: usize,
    /// Std of the noise added to the raw relevance before scaling.
    pub noise: f64,
    /// Feature column whose quantiles define the protected groups.
    pub quality_feature: usize,
    pub seed: u64,
}

impl Default for RankTaskConfig {
    fn default() -> Self {
        Self {
            items: 20,
            item_features: 5,
            groups: 2,
            queries: 350,
            noise: 0.3,
            quality_feature: 0,
            seed: 0,
        }
    }
}

impl RankTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.items < 2 || self.item_features < 4 || self.queries == 0 {
            return Err(Error::InvalidArgument(
                "ranking needs at least 2 items, 4 item features and 1 query".into(),
            ));
        }
        if self.groups == 0 || self.groups > self.items {
            return Err(Error::InvalidArgument(format!(
                "group count {} must lie in 1..={}",
                self.groups, self.items
            )));
        }
        if self.quality_feature >= self.item_features || self.noise < 0.0 {
            return Err(Error::InvalidArgument("invalid quality feature or noise".into()));
        }
        Ok(())
    }

    fn meta(&self) -> Vec<(String, String)> {
        vec![
            ("items".into(), self.items.to_string()),
            ("item_features".into(), self.item_features.to_string()),
            ("groups".into(), self.groups.to_string()),
            ("queries".into(), self.queries.to_string()),
            ("noise".into(), self.noise.to_string()),
            ("quality_feature".into(), self.quality_feature.to_string()),
        ]
    }
}

/// Queries of Gaussian item features, item-major. Raw relevance is a fixed
/// nonlinear function of the features plus noise, min-max scaled to `[0, 1]`
/// within each query.
pub fn gen_rank_task(cfg: &RankTaskConfig) -> Result<TaskDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("positive std");
    let f = cfg.item_features;
    let q = cfg.quality_feature;
    // the three other columns feeding the relevance
    let others: Vec<usize> = (0..f).filter(|&k| k != q).take(3).collect();
    let mut samples = Vec::with_capacity(cfg.queries);
    for _ in 0..cfg.queries {
        let z: Vec<f64> = (0..cfg.items * f).map(|_| gauss.sample(&mut rng)).collect();
        let raw: Vec<f64> = (0..cfg.items)
            .map(|i| {
                let x = &z[i * f..(i + 1) * f];
                let eps = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                1.5 * x[q] + (2.0 * x[others[0]]).sin() + 0.5 * x[others[1]] * x[others[2]] + eps
            })
            .collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let target = raw.iter().map(|r| (r - lo) / span).collect();
        samples.push(Sample { z, target });
    }
    Ok(TaskDataset {
        task: TaskKind::Rank,
        seed: cfg.seed,
        target_rows: 1,
        target_cols: cfg.items,
        feature_dim: cfg.items * f,
        meta: cfg.meta(),
        samples,
    })
}

/// Groups of one query: evenly spaced quantiles of the quality feature.
pub fn query_groups(z: &[f64], cfg: &RankTaskConfig) -> Result<GroupStructure> {
    check_len(cfg.items * cfg.item_features, z.len())?;
    let quality: Vec<f64> = (0..cfg.items)
        .map(|i| z[i * cfg.item_features + cfg.quality_feature])
        .collect();
    GroupStructure::by_quantiles(&quality, cfg.groups)
}

/// Utility `c^T P b` and fairness violation, the mean absolute deviation of
/// group exposures from their mean.
pub fn eval_ranking(
    policy: &RankingPolicy,
    c: &[f64],
    groups: &GroupStructure,
    b: &PositionBias,
    mean: ViolationMean,
) -> Result<(f64, f64)> {
    if !policy.is_doubly_stochastic(BISTOCHASTIC_TOL) {
        return Err(Error::NotBistochastic(format!(
            "policy rows or columns deviate from 1 by more than {BISTOCHASTIC_TOL}"
        )));
    }
    let utility = policy.utility(c, b)?;
    let exposure = groups.exposures(policy, b)?;
    let k = exposure.len() as f64;
    let denom = match mean {
        ViolationMean::Groups => k,
        ViolationMean::Items => policy.n() as f64,
    };
    let avg = exposure.iter().sum::<f64>() / denom;
    let violation = exposure.iter().map(|e| (avg - e).abs()).sum::<f64>() / k;
    Ok((utility, violation))
}

/// Half SPO+ loss of the fair ranking problem of each query.
pub struct RankObjective {
    pub task: RankTaskConfig,
    pub bias: PositionBias,
    pub solver: FairRankingConfig,
}

impl Objective for RankObjective {
    fn loss(&self, pred: &[f64], sample: &Sample) -> Result<(f64, Vec<f64>)> {
        let groups = query_groups(&sample.z, &self.task)?;
        let inst = RankSpoInstance {
            groups: &groups,
            bias: &self.bias,
            cfg: &self.solver,
        };
        spo_plus_rank_loss_and_grad(pred, &sample.target, &inst)
    }
}

pub fn rank_predictor(task: &RankTaskConfig, seed: u64) -> Result<Predictor> {
    Predictor::new(PredictorSpec::item_wise(task.item_features, 3, task.items), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankExperiment {
    pub task: RankTaskConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambdas: Vec<f64>,
    pub beta0: f64,
    /// Frank-Wolfe iterations during training.
    pub train_iters: usize,
    /// Frank-Wolfe iterations at evaluation.
    pub eval_iters: usize,
    pub violation_mean: ViolationMean,
}

impl Default for RankExperiment {
    fn default() -> Self {
        Self {
            task: RankTaskConfig::default(),
            train: 200,
            val: 50,
            test: 100,
            epochs: 20,
            batch_size: 64,
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 0.95],
            beta0: 1.0,
            train_iters: 100,
            eval_iters: 500,
            violation_mean: ViolationMean::Groups,
        }
    }
}

impl RankExperiment {
    pub fn solver(&self, lambda: f64, iters: usize) -> Result<FairRankingConfig> {
        Ok(FairRankingConfig {
            lambda,
            weights: fair_gini_weights(self.task.groups)?,
            beta0: self.beta0,
            iters,
        })
    }
}

pub struct RankData {
    pub dataset: TaskDataset,
    pub bias: PositionBias,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl RankData {
    pub fn prepare(exp: &RankExperiment, seed: u64) -> Result<Self> {
        let task = RankTaskConfig {
            seed,
            queries: exp.task.queries.max(exp.train + exp.val + exp.test),
            ..exp.task.clone()
        };
        let dataset = gen_rank_task(&task)?;
        let split = dataset.split(exp.train, exp.val, exp.test, seed)?;
        Ok(Self {
            bias: dcg_position_bias(task.items)?,
            train: dataset.subset(&split.train),
            val: dataset.subset(&split.val),
            test: dataset.subset(&split.test),
            dataset,
        })
    }
}

/// Mean utility and violation of a model's policies over a sample set,
/// together with the mean true objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankScore {
    pub utility: f64,
    pub violation: f64,
    pub objective: f64,
}

pub fn rank_score(
    model: &Predictor,
    samples: &[Sample],
    task: &RankTaskConfig,
    bias: &PositionBias,
    solver: &FairRankingConfig,
    mean: ViolationMean,
) -> Result<RankScore> {
    let mut acc = RankScore {
        utility: 0.0,
        violation: 0.0,
        objective: 0.0,
    };
    for s in samples {
        let groups = query_groups(&s.z, task)?;
        let policy = solve_fair_ranking_fw(&model.predict(&s.z)?, &groups, bias, solver)?.policy;
        let (u, v) = eval_ranking(&policy, &s.target, &groups, bias, mean)?;
        acc.utility += u;
        acc.violation += v;
        acc.objective +=
            fair_ranking_objective(&policy, &s.target, &groups, bias, solver.lambda, &solver.weights)?;
    }
    let k = samples.len().max(1) as f64;
    Ok(RankScore {
        utility: acc.utility / k,
        violation: acc.violation / k,
        objective: acc.objective / k,
    })
}

#[derive(Debug, Clone)]
pub struct RankOutcome {
    pub lambda: f64,
    pub trained: TrainedModel,
    pub test: RankScore,
}

/// Trains the SPO+ ranking model at one fairness weight. Validation picks the
/// epoch with the best true objective.
pub fn run_rank_method(
    exp: &RankExperiment,
    data: &RankData,
    lambda: f64,
    train_cfg: &TrainConfig,
) -> Result<RankOutcome> {
    let train_solver = exp.solver(lambda, exp.train_iters)?;
    let eval_solver = exp.solver(lambda, exp.eval_iters)?;
    let objective = RankObjective {
        task: exp.task.clone(),
        bias: data.bias.clone(),
        solver: train_solver.clone(),
    };
    let model = rank_predictor(&exp.task, train_cfg.seed)?;
    let mut validate = |p: &Predictor| {
        Ok(-rank_score(p, &data.val, &exp.task, &data.bias, &train_solver, exp.violation_mean)?.objective)
    };
    let trained = fit(model, &data.train, &objective, train_cfg, &mut validate)?;
    let test = rank_score(
        &trained.model,
        &data.test,
        &exp.task,
        &data.bias,
        &eval_solver,
        exp.violation_mean,
    )?;
    Ok(RankOutcome {
        lambda,
        trained,
        test,
    })
}

/// The only ranking method.
pub const RANK_METHOD: Method = Method::SpoRank;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relevance_is_scaled_per_query() {
        let d = gen_rank_task(&RankTaskConfig {
            queries: 5,
            ..Default::default()
        })
        .unwrap();
        for s in &d.samples {
            let lo = s.target.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn single_group_has_no_violation() {
        let b = dcg_position_bias(4).unwrap();
        let g = GroupStructure::single(4).unwrap();
        let p = RankingPolicy::from_order(&[2, 0, 3, 1]).unwrap();
        let (_, v) = eval_ranking(&p, &[0.1, 0.2, 0.3, 0.4], &g, &b, ViolationMean::Groups).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn uniform_policy_is_fair_for_equal_groups() {
        let b = dcg_position_bias(4).unwrap();
        let g = GroupStructure::new(vec![0, 1, 1, 0]).unwrap();
        let p = RankingPolicy::uniform(4).unwrap();
        let (_, v) = eval_ranking(&p, &[0.1, 0.2, 0.3, 0.4], &g, &b, ViolationMean::Groups).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn rejects_non_bistochastic() {
        let b = dcg_position_bias(2).unwrap();
        let g = GroupStructure::single(2).unwrap();
        let p = RankingPolicy::from_row_major(2, vec![1.0, 0.0, 1.0, 0.0]);
        if let Ok(p) = p {
            assert!(eval_ranking(&p, &[0.0, 1.0], &g, &b, ViolationMean::Groups).is_err());
        }
    }
}
