use itertools::Itertools;

use crate::error::{check_len, Error, Result};
use crate::owa::owa_value;
use crate::solvers::{
    solve_fair_ranking_fw, FairRankingConfig, GroupStructure, PositionBias, RankingPolicy,
};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v*(2 gamma_hat - gamma) - v*(gamma)` for a linear maximizer `v*` over a
/// fixed set. This is the exact subgradient of [`spo_plus_loss`].
pub fn spo_plus_subgradient(
    gamma_hat: &[f64],
    gamma: &[f64],
    solver: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    check_len(gamma.len(), gamma_hat.len())?;
    let shifted: Vec<f64> = gamma_hat.iter().zip(gamma).map(|(h, t)| 2.0 * h - t).collect();
    let a = solver(&shifted)?;
    let b = solver(gamma)?;
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// Half the SPO+ loss of a maximization problem:
/// `((2 gh - g) . v*(2 gh - g) - 2 gh . v*(g) + g . v*(g)) / 2`.
/// Nonnegative, zero at `gamma_hat = gamma`.
pub fn spo_plus_loss(
    gamma_hat: &[f64],
    gamma: &[f64],
    solver: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    check_len(gamma.len(), gamma_hat.len())?;
    let shifted: Vec<f64> = gamma_hat.iter().zip(gamma).map(|(h, t)| 2.0 * h - t).collect();
    let a = solver(&shifted)?;
    let b = solver(gamma)?;
    Ok(0.5 * (dot(&shifted, &a) - 2.0 * dot(gamma_hat, &b) + dot(gamma, &b)))
}

/// Maximizes `<P, gamma>` over `n x n` permutation matrices by enumeration;
/// `gamma` and the result are row-major. Ties go to the first permutation in
/// lexicographic order.
pub fn birkhoff_vertex_oracle(n: usize, gamma: &[f64]) -> Result<Vec<f64>> {
    check_len(n * n, gamma.len())?;
    if n > 8 {
        return Err(Error::CapacityExceeded {
            m: n,
            limit: 8,
            constraints: 0,
        });
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_order = Vec::new();
    for order in (0..n).permutations(n) {
        // order[pos] = item
        let v: f64 = order.iter().enumerate().map(|(pos, &i)| gamma[i * n + pos]).sum();
        if v > best {
            best = v;
            best_order = order;
        }
    }
    Ok(RankingPolicy::from_order(&best_order)?.as_row_major().to_vec())
}

/// A fair ranking instance with known groups and position bias; only the
/// relevance vector is predicted.
#[derive(Debug, Clone)]
pub struct RankSpoInstance<'a> {
    pub groups: &'a GroupStructure,
    pub bias: &'a PositionBias,
    pub cfg: &'a FairRankingConfig,
}

impl RankSpoInstance<'_> {
    /// Lifted solution `(P, y, z)` flattened as `(vec P, A P b, OWA(A P b))`
    /// together with the lifted objective vector for relevance `c`.
    fn lifted_value(&self, c_obj: &[f64], policy: &RankingPolicy) -> Result<f64> {
        let lambda = self.cfg.lambda;
        let util = policy.utility(c_obj, self.bias)?;
        let z = owa_value(&self.cfg.weights, &self.groups.exposures(policy, self.bias)?)?;
        Ok((1.0 - lambda) * util + lambda * z)
    }

    fn solve(&self, c: &[f64]) -> Result<RankingPolicy> {
        Ok(solve_fair_ranking_fw(c, self.groups, self.bias, self.cfg)?.policy)
    }
}

/// SPO+ subgradient for fair ranking w.r.t. predicted relevance. The problem
/// is lifted to `v = (P, y, z)` with objective `gamma = ((1 - lambda) c b^T, 0, lambda)`;
/// both argmax calls go through the Frank-Wolfe solver, and only the relevance
/// block `(1 - lambda) (P*(2 c_hat - c) - P*(c)) b` is returned.
pub fn spo_plus_for_owa_rank(
    c_hat: &[f64],
    c_true: &[f64],
    inst: &RankSpoInstance<'_>,
) -> Result<Vec<f64>> {
    Ok(spo_plus_rank_loss_and_grad(c_hat, c_true, inst)?.1)
}

/// Half SPO+ loss of the lifted ranking problem, consistent with
/// [`spo_plus_for_owa_rank`].
pub fn spo_plus_rank_loss(c_hat: &[f64], c_true: &[f64], inst: &RankSpoInstance<'_>) -> Result<f64> {
    Ok(spo_plus_rank_loss_and_grad(c_hat, c_true, inst)?.0)
}

/// Loss and subgradient together, sharing the two solves.
pub fn spo_plus_rank_loss_and_grad(
    c_hat: &[f64],
    c_true: &[f64],
    inst: &RankSpoInstance<'_>,
) -> Result<(f64, Vec<f64>)> {
    let n = c_true.len();
    check_len(n, c_hat.len())?;
    let shifted: Vec<f64> = c_hat.iter().zip(c_true).map(|(h, t)| 2.0 * h - t).collect();
    let p_shift = inst.solve(&shifted)?;
    let p_true = inst.solve(c_true)?;
    let a = inst.lifted_value(&shifted, &p_shift)?;
    let b_hat = inst.lifted_value(c_hat, &p_true)?;
    let b_true = inst.lifted_value(c_true, &p_true)?;
    let e_shift = p_shift.exposures(inst.bias)?;
    let e_true = p_true.exposures(inst.bias)?;
    let scale = 1.0 - inst.cfg.lambda;
    let grad = e_shift.iter().zip(&e_true).map(|(a, b)| scale * (a - b)).collect();
    Ok((0.5 * (a - 2.0 * b_hat + b_true), grad))
}
