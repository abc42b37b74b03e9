//! Forward solvers for the OWA optimization mappings.

mod frank_wolfe;
mod oracle;
pub(crate) mod qp;
mod ranking;
mod shortest_path;
mod subgradient;

pub use frank_wolfe::{
    solve_owa_moreau_frankwolfe, solve_owa_moreau_pgd, MoreauPgdConfig, MOREAU_BETA_DEFAULT,
};
pub use oracle::owa_enumeration_oracle;
pub use qp::{
    permutation_count, solve_owa_qp_reformulation, QpSolution, QP_MAX_CRITERIA,
};
pub use ranking::{
    dcg_position_bias, fair_ranking_objective, solve_fair_ranking_fw, FairRankingConfig,
    FairRankingSolution, GroupStructure, PositionBias, RankingPolicy,
};
pub use shortest_path::{
    owa_path_cost, solve_owa_shortest_path_exact, solve_shortest_path, GridGraph, GridPath, NEGATIVE_WEIGHT_CLAMP,
};
pub use subgradient::{solve_owa_projected_subgradient, StepRule, SubgradientConfig};

/// Tagged description of a decision set.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleRegion {
    /// Probability simplex of dimension `n`.
    Simplex(usize),
    /// Source-to-sink paths on a grid graph.
    GridFlow(GridGraph),
    /// Doubly stochastic `n x n` matrices.
    Birkhoff(usize),
}

impl FeasibleRegion {
    pub fn dim(&self) -> usize {
        match self {
            FeasibleRegion::Simplex(n) => *n,
            FeasibleRegion::GridFlow(g) => g.node_count(),
            FeasibleRegion::Birkhoff(n) => n * n,
        }
    }

    /// Membership of a flattened decision vector, within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            FeasibleRegion::Simplex(_) => {
                x.iter().all(|v| *v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            FeasibleRegion::GridFlow(g) => g.is_path_indicator(x),
            FeasibleRegion::Birkhoff(n) => RankingPolicy::from_row_major(*n, x.to_vec())
                .map(|p| p.is_doubly_stochastic(tol))
                .unwrap_or(false),
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    /// Objective of the problem the solver targets (smoothed where applicable).
    pub objective: f64,
    pub iterations: usize,
    pub final_step: f64,
    /// Solver-specific convergence measure (fixed-point residual, FW gap, ...).
    pub residual: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
