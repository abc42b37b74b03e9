//! Multi-species shortest path on a terrain grid: all species travel one
//! shared path, and the fair aggregate of their path lengths is minimized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::backward_blackbox_lp;
use crate::error::{check_len, Error, Result};
use crate::learn::{loss_two_stage, percent_regret, Method, Objective, Predictor, PredictorSpec, Sample, TrainConfig};
use crate::owa::{fair_gini_weights, CriteriaMatrix, OwaWeights};
use crate::solvers::{owa_path_cost, solve_owa_shortest_path_exact, solve_shortest_path, GridGraph};

use super::dataset::{TaskDataset, TaskKind};
use super::features::uniform;
use super::run::{fit, TrainedModel};

pub const TERRAINS: [&str; 3] = ["land", "water", "rock"];

#[derive(Debug, Clone, PartialEq)]
pub struct GridTaskConfig {
    pub rows: usize,
    pub cols: usize,
    /// Movement speed of each species on each terrain (`TERRAINS` order).
    /// A tile costs `1 / speed` to enter.
    pub speeds: Vec<[f64; 3]>,
    /// Per-tile multiplicative cost jitter, uniform in `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
    /// Majority-filter passes applied to the random terrain labels.
    pub smoothing: usize,
    /// Std of the Gaussian noise on the one-hot terrain features.
    pub feature_noise: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GridTaskConfig {
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 6,
            // human, naga, dwarf
            speeds: vec![[1.0, 0.25, 0.5], [0.4, 1.0, 0.2], [0.5, 0.2, 1.0]],
            jitter: 0.2,
            smoothing: 1,
            feature_noise: 1.0,
            samples: 275,
            seed: 0,
        }
    }
}

impl GridTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols < 2 || self.samples == 0 || self.speeds.is_empty() {
            return Err(Error::InvalidArgument("grid task sizes must be positive".into()));
        }
        if self.speeds.iter().flatten().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("speeds must be positive and finite".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) || self.feature_noise < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "jitter {} must lie in [0, 1) and noise must be nonnegative",
                self.jitter
            )));
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<GridGraph> {
        GridGraph::new(self.rows, self.cols)
    }

    pub fn species(&self) -> usize {
        self.speeds.len()
    }

    fn meta(&self) -> Vec<(String, String)> {
        let speeds: Vec<String> = self
            .speeds
            .iter()
            .map(|s| format!("{}:{}:{}", s[0], s[1], s[2]))
            .collect();
        vec![
            ("rows".into(), self.rows.to_string()),
            ("cols".into(), self.cols.to_string()),
            ("speeds".into(), speeds.join(",")),
            ("jitter".into(), self.jitter.to_string()),
            ("smoothing".into(), self.smoothing.to_string()),
            ("feature_noise".into(), self.feature_noise.to_string()),
        ]
    }
}

/// Replaces each label by the most frequent one in its 3x3 neighbourhood,
/// keeping the current label on ties.
fn majority_filter(labels: &[usize], rows: usize, cols: usize) -> Vec<usize> {
    let mut out = labels.to_vec();
    for r in 0..rows {
        for c in 0..cols {
            let mut counts = [0usize; 3];
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                        counts[labels[rr as usize * cols + cc as usize]] += 1;
                    }
                }
            }
            let own = labels[r * cols + c];
            let top = (0..3).max_by_key(|&t| (counts[t], t == own)).unwrap_or(own);
            out[r * cols + c] = top;
        }
    }
    out
}

/// Random terrain maps with per-species node costs. Features are the noisy
/// one-hot terrain encoding of each tile, tile-major.
pub fn gen_grid_task(cfg: &GridTaskConfig) -> Result<TaskDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.rows * cfg.cols;
    let m = cfg.species();
    let jitter = uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    let noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE)).expect("positive std");
    let mut samples = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for _ in 0..cfg.smoothing {
            labels = majority_filter(&labels, cfg.rows, cfg.cols);
        }
        let scale: Vec<f64> = (0..n).map(|_| jitter.sample(&mut rng)).collect();
        let mut target = Vec::with_capacity(m * n);
        for speed in &cfg.speeds {
            for (t, s) in labels.iter().zip(&scale) {
                target.push(s / speed[*t]);
            }
        }
        let mut z = Vec::with_capacity(3 * n);
        for &t in &labels {
            for k in 0..3 {
                let hot = if k == t { 1.0 } else { 0.0 };
                z.push(if cfg.feature_noise > 0.0 { hot + noise.sample(&mut rng) } else { hot });
            }
        }
        samples.push(Sample { z, target });
    }
    Ok(TaskDataset {
        task: TaskKind::Grid,
        seed: cfg.seed,
        target_rows: m,
        target_cols: n,
        feature_dim: 3 * n,
        meta: cfg.meta(),
        samples,
    })
}

/// Column sums of a row-major `m x n` matrix.
fn column_sums(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    (0..n).map(|j| (0..m).map(|i| data[i * n + j]).sum()).collect()
}

fn lengths(c: &[f64], m: usize, n: usize, x: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| c[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Gradient of the fair aggregate `Phi(C x)` w.r.t. `x`: `C^T` applied to the
/// weights placed on the lengths in decreasing order.
fn aggregate_gradient(w: &[f64], c: &[f64], m: usize, n: usize, x: &[f64]) -> (f64, Vec<f64>) {
    let y = lengths(c, m, n, x);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
    let mut g = vec![0.0; n];
    for (rank, &k) in order.iter().enumerate() {
        for j in 0..n {
            g[j] += w[rank] * c[k * n + j];
        }
    }
    (owa_path_cost(w, &y), g)
}

/// Training objective of one grid method. Path lengths are minimized, so
/// every loss here is a length.
pub struct GridObjective {
    pub method: Method,
    pub graph: GridGraph,
    pub weights: OwaWeights,
    pub m: usize,
    /// Interpolation strength of the blackbox backward pass.
    pub lambda_bb: f64,
    /// Weight of the surrogate's regression on species-averaged costs.
    pub surrogate_mse: f64,
}

impl Objective for GridObjective {
    fn loss(&self, pred: &[f64], sample: &Sample) -> Result<(f64, Vec<f64>)> {
        let n = self.graph.node_count();
        let m = self.m;
        match self.method {
            Method::TwoStage => loss_two_stage(pred, &sample.target),
            Method::Uws => {
                check_len(m * n, pred.len())?;
                let c_sum = column_sums(pred, m, n);
                let path = solve_shortest_path(&self.graph, &c_sum)?;
                let g = column_sums(&sample.target, m, n);
                let loss = g.iter().zip(&path.node_indicator).map(|(a, b)| a * b).sum();
                let d = backward_blackbox_lp(&self.graph, &c_sum, &g, self.lambda_bb)?;
                Ok((loss, d.repeat(m)))
            }
            Method::SurrogateLp => {
                check_len(n, pred.len())?;
                let costs = surrogate_costs(pred);
                let path = solve_shortest_path(&self.graph, &costs)?;
                let (loss, g) =
                    aggregate_gradient(self.weights.as_slice(), &sample.target, m, n, &path.node_indicator);
                let d = backward_blackbox_lp(&self.graph, &costs, &g, self.lambda_bb)?;
                // regression of the costs on the species-averaged node cost
                let a = self.surrogate_mse;
                let mean: Vec<f64> = column_sums(&sample.target, m, n).iter().map(|v| v / m as f64).collect();
                let (mse, gm) = loss_two_stage(&costs, &mean)?;
                let grad = d
                    .iter()
                    .zip(&gm)
                    .zip(pred)
                    .map(|((di, mi), o)| ((1.0 - a) * di + a * mi) / (1.0 + (-o).exp()))
                    .collect();
                Ok(((1.0 - a) * loss + a * mse, grad))
            }
            other => Err(Error::InvalidArgument(format!(
                "method `{other}` does not apply to the grid task"
            ))),
        }
    }
}

/// Node costs of the surrogate model: softplus of the raw outputs, so every
/// output keeps a positive cost and a nonzero derivative.
pub fn surrogate_costs(pred: &[f64]) -> Vec<f64> {
    pred.iter()
        .map(|&o| if o > 30.0 { o } else { o.exp().ln_1p() })
        .collect()
}

/// Width of the first hidden layer of the per-tile network; later layers halve.
pub const TILE_HIDDEN: usize = 32;

/// Per-tile network shared across the grid (a 1x1 convolution stack), with
/// one scalar head per predicted cost row.
pub fn grid_predictor(method: Method, n: usize, m: usize, seed: u64) -> Result<Predictor> {
    let heads = if method == Method::SurrogateLp { 1 } else { m };
    let mut spec = PredictorSpec::item_wise_heads(TERRAINS.len(), 3, n, heads);
    spec.hidden = vec![TILE_HIDDEN, TILE_HIDDEN / 2, TILE_HIDDEN / 4];
    Predictor::new(spec, seed)
}

/// Path chosen by a trained model of the given method.
pub fn grid_decision(
    method: Method,
    graph: &GridGraph,
    w: &OwaWeights,
    m: usize,
    pred: &[f64],
) -> Result<Vec<f64>> {
    let n = graph.node_count();
    let path = match method {
        Method::TwoStage => {
            let c_hat = CriteriaMatrix::from_row_slice(m, n, pred)?;
            solve_owa_shortest_path_exact(graph, w, &c_hat)?
        }
        Method::Uws => solve_shortest_path(graph, &column_sums(pred, m, n))?,
        Method::SurrogateLp => solve_shortest_path(graph, &surrogate_costs(pred))?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "method `{other}` does not apply to the grid task"
            )))
        }
    };
    Ok(path.node_indicator)
}

/// Optimal fair aggregate and each species' own shortest length.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReference {
    pub aggregate: f64,
    pub species: Vec<f64>,
}

pub fn grid_reference(graph: &GridGraph, w: &OwaWeights, m: usize, target: &[f64]) -> Result<GridReference> {
    let n = graph.node_count();
    let c = CriteriaMatrix::from_row_slice(m, n, target)?;
    let aggregate = solve_owa_shortest_path_exact(graph, w, &c)?.cost;
    let species = (0..m)
        .map(|k| Ok(solve_shortest_path(graph, &target[k * n..(k + 1) * n])?.cost))
        .collect::<Result<_>>()?;
    Ok(GridReference { aggregate, species })
}

/// Mean percentage regrets over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRegret {
    pub aggregate_pct: f64,
    /// Per-species path length regret relative to that species' own shortest path.
    pub species_pct: Vec<f64>,
}

impl GridRegret {
    /// Largest mean per-species regret.
    pub fn worst_species_pct(&self) -> f64 {
        self.species_pct.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn grid_regret(
    method: Method,
    model: &Predictor,
    graph: &GridGraph,
    w: &OwaWeights,
    m: usize,
    samples: &[Sample],
    refs: &[GridReference],
) -> Result<GridRegret> {
    check_len(samples.len(), refs.len())?;
    let n = graph.node_count();
    let mut agg = 0.0;
    let mut species = vec![0.0; m];
    for (s, r) in samples.iter().zip(refs) {
        let x = grid_decision(method, graph, w, m, &model.predict(&s.z)?)?;
        let y = lengths(&s.target, m, n, &x);
        agg += percent_regret(owa_path_cost(w.as_slice(), &y) - r.aggregate, r.aggregate);
        for k in 0..m {
            species[k] += percent_regret(y[k] - r.species[k], r.species[k]);
        }
    }
    let count = samples.len().max(1) as f64;
    Ok(GridRegret {
        aggregate_pct: agg / count,
        species_pct: species.iter().map(|v| v / count).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridExperiment {
    pub task: GridTaskConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_bb: f64,
    pub surrogate_mse: f64,
}

impl Default for GridExperiment {
    fn default() -> Self {
        Self {
            task: GridTaskConfig::default(),
            train: 50,
            val: 25,
            test: 200,
            epochs: 100,
            batch_size: 64,
            lambda_bb: 20.0,
            surrogate_mse: 0.0,
        }
    }
}

pub struct GridData {
    pub dataset: TaskDataset,
    pub graph: GridGraph,
    pub weights: OwaWeights,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub val_refs: Vec<GridReference>,
    pub test_refs: Vec<GridReference>,
}

impl GridData {
    pub fn prepare(exp: &GridExperiment, seed: u64) -> Result<Self> {
        let task = GridTaskConfig {
            seed,
            samples: exp.task.samples.max(exp.train + exp.val + exp.test),
            ..exp.task.clone()
        };
        let dataset = gen_grid_task(&task)?;
        let graph = task.graph()?;
        let m = task.species();
        let weights = fair_gini_weights(m)?;
        let split = dataset.split(exp.train, exp.val, exp.test, seed)?;
        let refs = |set: &[Sample]| -> Result<Vec<GridReference>> {
            set.iter().map(|s| grid_reference(&graph, &weights, m, &s.target)).collect()
        };
        let val = dataset.subset(&split.val);
        let test = dataset.subset(&split.test);
        Ok(Self {
            train: dataset.subset(&split.train),
            val_refs: refs(&val)?,
            test_refs: refs(&test)?,
            val,
            test,
            graph,
            weights,
            dataset,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub method: Method,
    pub trained: TrainedModel,
    pub test: GridRegret,
}

pub fn run_grid_method(
    exp: &GridExperiment,
    data: &GridData,
    method: Method,
    train_cfg: &TrainConfig,
) -> Result<GridOutcome> {
    let m = exp.task.species();
    let n = data.graph.node_count();
    let objective = GridObjective {
        method,
        graph: data.graph.clone(),
        weights: data.weights.clone(),
        m,
        lambda_bb: exp.lambda_bb,
        surrogate_mse: exp.surrogate_mse,
    };
    let model = grid_predictor(method, n, m, train_cfg.seed)?;
    let mut validate = |p: &Predictor| {
        Ok(grid_regret(method, p, &data.graph, &data.weights, m, &data.val, &data.val_refs)?.aggregate_pct)
    };
    let trained = fit(model, &data.train, &objective, train_cfg, &mut validate)?;
    let test = grid_regret(
        method,
        &trained.model,
        &data.graph,
        &data.weights,
        m,
        &data.test,
        &data.test_refs,
    )?;
    Ok(GridOutcome { method, trained, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn costs_follow_speed_tables() {
        let cfg = GridTaskConfig {
            jitter: 0.0,
            feature_noise: 0.0,
            samples: 3,
            ..Default::default()
        };
        let d = gen_grid_task(&cfg).unwrap();
        let n = 36;
        for s in &d.samples {
            for j in 0..n {
                let t = (0..3).find(|&k| s.z[3 * j + k] == 1.0).unwrap();
                for (k, speed) in cfg.speeds.iter().enumerate() {
                    assert!((s.target[k * n + j] - 1.0 / speed[t]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn majority_filter_removes_isolated_tile() {
        let mut labels = vec![0; 9];
        labels[4] = 2;
        assert_eq!(majority_filter(&labels, 3, 3), vec![0; 9]);
    }

    #[test]
    fn reference_aggregate_bounds_species() {
        let cfg = GridTaskConfig {
            samples: 4,
            ..Default::default()
        };
        let d = gen_grid_task(&cfg).unwrap();
        let g = cfg.graph().unwrap();
        let w = fair_gini_weights(3).unwrap();
        for s in &d.samples {
            let r = grid_reference(&g, &w, 3, &s.target).unwrap();
            // the fair optimum is no better than the species-wise optima combined
            assert!(r.aggregate >= owa_path_cost(w.as_slice(), &r.species) - 1e-9);
        }
    }
}
