//! Robust portfolio allocation over price scenarios: maximize `OWA_w(C x)`
//! over the simplex, where row `i` of `C` holds asset prices in scenario `i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{backward_fixed_point, backward_qp_kkt};
use crate::error::{check_len, Error, Result};
use crate::geometry::project_simplex_with_support;
use crate::learn::{
    loss_owa_dq, Method, Objective, Predictor, PredictorSpec, Sample, TrainConfig,
};
use crate::owa::{fair_gini_weights, owa_of_decision, CriteriaMatrix, OwaWeights};
use crate::solvers::{
    solve_owa_moreau_pgd, solve_owa_projected_subgradient, solve_owa_qp_reformulation,
    MoreauPgdConfig, SubgradientConfig,
};

use super::dataset::{TaskDataset, TaskKind};
use super::features::{uniform, RandomFeatureMap};
use super::regret::{eval_regret_suite, RegretTable, Sense};
use super::run::{fit, TrainedModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioTaskConfig {
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    /// Std of the Gaussian noise added to drawn price vectors.
    pub noise: f64,
    pub factor_low: f64,
    pub factor_high: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Length of the simulated price history that base vectors are drawn from.
    pub history: usize,
    pub seed: u64,
}

impl Default for PortfolioTaskConfig {
    fn default() -> Self {
        Self {
            n: 10,
            m: 3,
            samples: 1000,
            noise: 0.05,
            factor_low: 0.5,
            factor_high: 1.5,
            feature_dim: 20,
            feature_noise: 0.05,
            history: 250,
            seed: 0,
        }
    }
}

impl PortfolioTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.samples == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument("portfolio sizes must be positive".into()));
        }
        if self.factor_low > self.factor_high {
            return Err(Error::InvalidArgument(format!(
                "factor range ({}, {}) is reversed",
                self.factor_low, self.factor_high
            )));
        }
        if self.noise < 0.0 || self.feature_noise < 0.0 || self.history == 0 {
            return Err(Error::InvalidArgument("noise levels must be nonnegative".into()));
        }
        Ok(())
    }

    fn meta(&self) -> Vec<(String, String)> {
        vec![
            ("n".into(), self.n.to_string()),
            ("m".into(), self.m.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("noise".into(), self.noise.to_string()),
            ("factor_low".into(), self.factor_low.to_string()),
            ("factor_high".into(), self.factor_high.to_string()),
            ("feature_noise".into(), self.feature_noise.to_string()),
            ("history".into(), self.history.to_string()),
        ]
    }
}

/// Price vectors are drawn from a simulated price history (a geometric random
/// walk per asset) with Gaussian noise added; each scenario row multiplies them
/// elementwise by factors drawn uniformly from `[low, high]`. Features come
/// from a fixed random rectifier network applied to the flattened `C`.
pub fn gen_portfolio(cfg: &PortfolioTaskConfig) -> Result<TaskDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = uniform(0.5, 1.5);
    let step = Normal::new(0.0, 0.02).expect("positive std");
    let mut history = Vec::with_capacity(cfg.history);
    let mut prices: Vec<f64> = (0..cfg.n).map(|_| start.sample(&mut rng)).collect();
    for _ in 0..cfg.history {
        for p in prices.iter_mut() {
            *p *= f64::exp(step.sample(&mut rng));
        }
        history.push(prices.clone());
    }
    let feature_map = RandomFeatureMap::new(cfg.m * cfg.n, cfg.feature_dim, cfg.feature_noise, rng.random());
    let factor = uniform(cfg.factor_low, cfg.factor_high);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("positive std");
    let center = 0.5 * (cfg.factor_low + cfg.factor_high);
    let mut samples = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let day = &history[rng.random_range(0..cfg.history)];
        let base: Vec<f64> = day
            .iter()
            .map(|p| if cfg.noise > 0.0 { p + noise.sample(&mut rng) } else { *p })
            .collect();
        let mut target = Vec::with_capacity(cfg.m * cfg.n);
        for _ in 0..cfg.m {
            for b in &base {
                target.push(b * factor.sample(&mut rng));
            }
        }
        let z = feature_map.apply(&target, center, &mut rng);
        samples.push(Sample { z, target });
    }
    Ok(TaskDataset {
        task: TaskKind::Portfolio,
        seed: cfg.seed,
        target_rows: cfg.m,
        target_cols: cfg.n,
        feature_dim: cfg.feature_dim,
        meta: cfg.meta(),
        samples,
    })
}

/// Solver settings of the differentiable routes.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSolverConfig {
    pub moreau: MoreauPgdConfig,
    pub qp_epsilon: f64,
    /// Quadratic smoothing of the unweighted-sum linear program.
    pub uws_epsilon: f64,
    /// Largest norm of the fixed-point cotangent passed back to the model.
    pub grad_clip: Option<f64>,
}

impl Default for PortfolioSolverConfig {
    fn default() -> Self {
        Self::for_criteria(3)
    }
}

impl PortfolioSolverConfig {
    pub fn for_criteria(m: usize) -> Self {
        Self {
            moreau: MoreauPgdConfig::training(m),
            qp_epsilon: 1.0,
            uws_epsilon: 1.0,
            grad_clip: Some(1.0),
        }
    }
}

/// Negated decision quality of the chosen route; lower is better.
pub struct PortfolioObjective {
    pub method: Method,
    pub weights: OwaWeights,
    pub m: usize,
    pub n: usize,
    pub solver: PortfolioSolverConfig,
}

impl PortfolioObjective {
    fn truth(&self, sample: &Sample) -> Result<CriteriaMatrix> {
        CriteriaMatrix::from_row_slice(self.m, self.n, &sample.target)
    }
}

impl Objective for PortfolioObjective {
    fn loss(&self, pred: &[f64], sample: &Sample) -> Result<(f64, Vec<f64>)> {
        check_len(self.m * self.n, pred.len())?;
        let truth = self.truth(sample)?;
        let c_hat = CriteriaMatrix::from_row_slice(self.m, self.n, pred)?;
        match self.method {
            Method::OwaMoreau => {
                let report = solve_owa_moreau_pgd(&self.weights, &c_hat, &self.solver.moreau)?;
                let x = report.solution;
                let (dq, gx) = loss_owa_dq(&self.weights, &truth, &x)?;
                let neg: Vec<f64> = gx.iter().map(|v| -v).collect();
                let back = backward_fixed_point(
                    &self.weights,
                    &c_hat,
                    &x,
                    &neg,
                    self.solver.moreau.beta,
                    report.final_step,
                )?;
                let mut gc = back.grad_c;
                if let Some(limit) = self.solver.grad_clip {
                    clip_norm(&mut gc, limit);
                }
                Ok((-dq, gc))
            }
            Method::OwaQp => {
                let sol = solve_owa_qp_reformulation(&self.weights, &c_hat, self.solver.qp_epsilon)?;
                let (dq, gx) = loss_owa_dq(&self.weights, &truth, sol.x())?;
                let neg: Vec<f64> = gx.iter().map(|v| -v).collect();
                Ok((-dq, backward_qp_kkt(&c_hat, &sol, &neg)?.grad_c))
            }
            Method::Uws => {
                // argmax 1^T C x - eps |x|^2 over the simplex
                let eps = self.solver.uws_epsilon;
                let sums: Vec<f64> = (0..self.n)
                    .map(|j| (0..self.m).map(|i| pred[i * self.n + j]).sum::<f64>() / (2.0 * eps))
                    .collect();
                let proj = project_simplex_with_support(&sums);
                let x = &proj.point;
                let true_sums: Vec<f64> = (0..self.n)
                    .map(|j| (0..self.m).map(|i| truth.get(i, j)).sum())
                    .collect();
                let value: f64 = true_sums.iter().zip(x).map(|(a, b)| a * b).sum();
                let gx: Vec<f64> = true_sums.iter().map(|v| -v).collect();
                let gs: Vec<f64> = proj
                    .jacobian_apply(&gx)
                    .iter()
                    .map(|v| v / (2.0 * eps))
                    .collect();
                let mut grad = vec![0.0; self.m * self.n];
                for i in 0..self.m {
                    grad[i * self.n..(i + 1) * self.n].copy_from_slice(&gs);
                }
                Ok((-value, grad))
            }
            Method::TwoStage => crate::learn::loss_two_stage(pred, &sample.target),
            other => Err(Error::InvalidArgument(format!(
                "method `{other}` does not apply to the portfolio task"
            ))),
        }
    }
}

fn clip_norm(g: &mut [f64], limit: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > limit {
        g.iter_mut().for_each(|v| *v *= limit / norm);
    }
}

pub fn portfolio_predictor(feature_dim: usize, m: usize, n: usize, seed: u64) -> Result<Predictor> {
    Predictor::new(PredictorSpec::halving(feature_dim, 3, m, n), seed)
}

/// Reference optimum `max_x OWA_w(C x)` by a long projected subgradient run.
pub fn portfolio_reference(w: &OwaWeights, c: &CriteriaMatrix) -> Result<f64> {
    Ok(solve_owa_projected_subgradient(w, c, &SubgradientConfig::precise())?.objective)
}

/// Test-time decision for a predicted `C`.
pub fn portfolio_decision(w: &OwaWeights, c_hat: &CriteriaMatrix) -> Result<Vec<f64>> {
    let cfg = SubgradientConfig::for_criteria(c_hat.m());
    Ok(solve_owa_projected_subgradient(w, c_hat, &cfg)?.solution)
}

/// Per-sample OWA regret of `model` on `samples`; `refs` holds the
/// reference optima.
pub fn portfolio_regret_table(
    model: &Predictor,
    samples: &[Sample],
    refs: &[f64],
    w: &OwaWeights,
    m: usize,
    n: usize,
) -> Result<RegretTable> {
    check_len(samples.len(), refs.len())?;
    let achieved = samples
        .iter()
        .map(|s| {
            let c_hat = CriteriaMatrix::from_row_slice(m, n, &model.predict(&s.z)?)?;
            let x = portfolio_decision(w, &c_hat)?;
            owa_of_decision(w, &CriteriaMatrix::from_row_slice(m, n, &s.target)?, &x)
        })
        .collect::<Result<Vec<_>>>()?;
    eval_regret_suite(&achieved, refs, Sense::Maximize)
}

/// Mean percentage OWA regret of `model` on `samples`.
pub fn portfolio_regret(
    model: &Predictor,
    samples: &[Sample],
    refs: &[f64],
    w: &OwaWeights,
    m: usize,
    n: usize,
) -> Result<f64> {
    Ok(portfolio_regret_table(model, samples, refs, w, m, n)?.mean_percent())
}

/// One portfolio experiment: a generated dataset, a split and the training
/// schedule shared by all methods.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioExperiment {
    pub task: PortfolioTaskConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub solver: PortfolioSolverConfig,
}

impl Default for PortfolioExperiment {
    fn default() -> Self {
        Self {
            task: PortfolioTaskConfig::default(),
            train: 700,
            val: 100,
            test: 200,
            epochs: 40,
            batch_size: 64,
            solver: PortfolioSolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PortfolioOutcome {
    pub method: Method,
    pub trained: TrainedModel,
    pub test_regret_pct: f64,
}

/// Prepared data for one seed: the dataset, its split and reference optima.
pub struct PortfolioData {
    pub dataset: TaskDataset,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub val_refs: Vec<f64>,
    pub test_refs: Vec<f64>,
    pub weights: OwaWeights,
}

impl PortfolioData {
    pub fn prepare(exp: &PortfolioExperiment, seed: u64) -> Result<Self> {
        let task = PortfolioTaskConfig {
            seed,
            ..exp.task.clone()
        };
        let dataset = gen_portfolio(&task)?;
        let split = dataset.split(exp.train, exp.val, exp.test, seed)?;
        let weights = fair_gini_weights(task.m)?;
        let refs = |set: &[Sample]| -> Result<Vec<f64>> {
            set.iter()
                .map(|s| portfolio_reference(&weights, &CriteriaMatrix::from_row_slice(task.m, task.n, &s.target)?))
                .collect()
        };
        let val = dataset.subset(&split.val);
        let test = dataset.subset(&split.test);
        Ok(Self {
            train: dataset.subset(&split.train),
            val_refs: refs(&val)?,
            test_refs: refs(&test)?,
            val,
            test,
            weights,
            dataset,
        })
    }
}

/// Trains `method` on prepared data and reports its test regret.
pub fn run_portfolio_method(
    exp: &PortfolioExperiment,
    data: &PortfolioData,
    method: Method,
    train_cfg: &TrainConfig,
) -> Result<PortfolioOutcome> {
    let (m, n) = (exp.task.m, exp.task.n);
    let objective = PortfolioObjective {
        method,
        weights: data.weights.clone(),
        m,
        n,
        solver: exp.solver.clone(),
    };
    let model = portfolio_predictor(exp.task.feature_dim, m, n, train_cfg.seed)?;
    let mut validate =
        |p: &Predictor| portfolio_regret(p, &data.val, &data.val_refs, &data.weights, m, n);
    let trained = fit(model, &data.train, &objective, train_cfg, &mut validate)?;
    let test_regret_pct =
        portfolio_regret(&trained.model, &data.test, &data.test_refs, &data.weights, m, n)?;
    Ok(PortfolioOutcome {
        method,
        trained,
        test_regret_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_factor_range_repeats_rows() {
        let cfg = PortfolioTaskConfig {
            factor_low: 1.0,
            factor_high: 1.0,
            samples: 5,
            ..Default::default()
        };
        let d = gen_portfolio(&cfg).unwrap();
        for s in &d.samples {
            for i in 1..cfg.m {
                assert_eq!(s.target[..cfg.n], s.target[i * cfg.n..(i + 1) * cfg.n]);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = PortfolioTaskConfig {
            samples: 20,
            ..Default::default()
        };
        assert_eq!(gen_portfolio(&cfg).unwrap(), gen_portfolio(&cfg).unwrap());
    }
}
