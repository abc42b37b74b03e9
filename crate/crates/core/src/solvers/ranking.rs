//! Fair ranking over the Birkhoff polytope: maximize
//! `(1 - lambda) c^T P b + lambda OWA_w(A P b)` over doubly stochastic `P`,
//! solved by Frank-Wolfe with a shrinking Moreau smoothing of the OWA term.

use crate::error::{check_len, Error, Result};
use crate::geometry::{moreau_owa_gradient, SmoothingParam};
use crate::owa::{owa_value, OwaWeights};

/// Row `i` = item, column `j` = position.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingPolicy {
    n: usize,
    data: Vec<f64>,
}

impl RankingPolicy {
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len(n * n, data.len())?;
        if n == 0 {
            return Err(Error::InvalidArgument("empty ranking policy".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ranking policy"));
        }
        Ok(Self { n, data })
    }

    /// Permutation matrix placing item `order[j]` at position `j`.
    pub fn from_order(order: &[usize]) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        let mut data = vec![0.0; n * n];
        for (pos, &item) in order.iter().enumerate() {
            if item >= n || seen[item] {
                return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
            }
            seen[item] = true;
            data[item * n + pos] = 1.0;
        }
        Self::from_row_major(n, data)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_row_major(n, vec![1.0 / n as f64; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, item: usize, pos: usize) -> f64 {
        self.data[item * self.n + pos]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        let n = self.n;
        if self.data.iter().any(|v| *v < -tol || *v > 1.0 + tol) {
            return false;
        }
        (0..n).all(|i| ((0..n).map(|j| self.get(i, j)).sum::<f64>() - 1.0).abs() <= tol)
            && (0..n).all(|j| ((0..n).map(|i| self.get(i, j)).sum::<f64>() - 1.0).abs() <= tol)
    }

    /// Item exposures `P b`.
    pub fn exposures(&self, b: &PositionBias) -> Result<Vec<f64>> {
        check_len(self.n, b.len())?;
        Ok((0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * b.b[j]).sum())
            .collect())
    }

    /// Expected DCG `c^T P b`.
    pub fn utility(&self, c: &[f64], b: &PositionBias) -> Result<f64> {
        check_len(self.n, c.len())?;
        Ok(self.exposures(b)?.iter().zip(c).map(|(e, ci)| e * ci).sum())
    }

    /// `(1 - t) self + t other`.
    pub fn blend(&mut self, other: &RankingPolicy, t: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = (1.0 - t) * *a + t * b;
        }
    }
}

/// Partition of items into protected groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    membership: Vec<usize>,
    count: usize,
}

impl GroupStructure {
    pub fn new(membership: Vec<usize>) -> Result<Self> {
        if membership.is_empty() {
            return Err(Error::InvalidArgument("no items".into()));
        }
        let count = membership.iter().max().map_or(0, |g| g + 1);
        let mut used = vec![false; count];
        for &g in &membership {
            used[g] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidArgument(format!(
                "group labels must be contiguous from 0, got {membership:?}"
            )));
        }
        Ok(Self { membership, count })
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![0; n])
    }

    /// Groups by evenly spaced quantiles of `values`: items are ranked by value
    /// (ties by index) and cut into `k` consecutive blocks whose sizes differ by
    /// at most one.
    pub fn by_quantiles(values: &[f64], k: usize) -> Result<Self> {
        let n = values.len();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("cannot split {n} items into {k} groups")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut membership = vec![0; n];
        for (rank, &i) in idx.iter().enumerate() {
            membership[i] = rank * k / n;
        }
        Self::new(membership)
    }

    pub fn group_count(&self) -> usize {
        self.count
    }

    pub fn item_count(&self) -> usize {
        self.membership.len()
    }

    pub fn group_of(&self, item: usize) -> usize {
        self.membership[item]
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &g in &self.membership {
            s[g] += 1;
        }
        s
    }

    /// Binary `|G| x n` indicator matrix, row-major.
    pub fn indicator(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.membership.len()]; self.count];
        for (i, &g) in self.membership.iter().enumerate() {
            a[g][i] = 1.0;
        }
        a
    }

    /// `A e`: sums item values per group.
    pub fn aggregate(&self, item_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count];
        for (i, &g) in self.membership.iter().enumerate() {
            out[g] += item_values[i];
        }
        out
    }

    /// `A^T q`: broadcasts group values to their items.
    pub fn broadcast(&self, group_values: &[f64]) -> Vec<f64> {
        self.membership.iter().map(|&g| group_values[g]).collect()
    }

    /// Group exposures `A P b`.
    pub fn exposures(&self, policy: &RankingPolicy, b: &PositionBias) -> Result<Vec<f64>> {
        check_len(self.item_count(), policy.n())?;
        Ok(self.aggregate(&policy.exposures(b)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionBias {
    b: Vec<f64>,
}

impl PositionBias {
    pub fn new(b: Vec<f64>) -> Result<Self> {
        if b.is_empty() || b.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("position bias must be positive".into()));
        }
        if b.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidArgument(
                "position bias must be strictly decreasing".into(),
            ));
        }
        Ok(Self { b })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

/// `b_j = 1 / log2(1 + j)` for positions `j = 1..n`.
pub fn dcg_position_bias(n: usize) -> Result<PositionBias> {
    PositionBias::new((1..=n).map(|j| 1.0 / ((1 + j) as f64).log2()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairRankingConfig {
    pub lambda: f64,
    pub weights: OwaWeights,
    pub beta0: f64,
    pub iters: usize,
}

impl FairRankingConfig {
    fn validate(&self, groups: &GroupStructure) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("iters must be at least 1".into()));
        }
        SmoothingParam::new(self.beta0)?;
        check_len(groups.group_count(), self.weights.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairRankingSolution {
    pub policy: RankingPolicy,
    /// Unsmoothed objective at the returned policy.
    pub objective: f64,
    pub iterations: usize,
    pub final_beta: f64,
}

/// `(1 - lambda) c^T P b + lambda OWA_w(A P b)`.
pub fn fair_ranking_objective(
    policy: &RankingPolicy,
    c: &[f64],
    groups: &GroupStructure,
    b: &PositionBias,
    lambda: f64,
    w: &OwaWeights,
) -> Result<f64> {
    let util = policy.utility(c, b)?;
    let exposure = groups.exposures(policy, b)?;
    Ok((1.0 - lambda) * util + lambda * owa_value(w, &exposure)?)
}

/// Item order sorting `scores` decreasingly, ties by index.
pub(crate) fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Frank-Wolfe with Moreau smoothing. Starts from the permutation sorting
/// `y_hat` decreasingly; iteration `k` smooths at `beta0 / sqrt(k + 1)`,
/// takes the sort of `(1 - lambda) y_hat + lambda A^T mu` as the Birkhoff
/// vertex and mixes it in with weight `2 / (k + 2)`.
pub fn solve_fair_ranking_fw(
    y_hat: &[f64],
    groups: &GroupStructure,
    b: &PositionBias,
    cfg: &FairRankingConfig,
) -> Result<FairRankingSolution> {
    let n = y_hat.len();
    check_len(n, groups.item_count())?;
    check_len(n, b.len())?;
    cfg.validate(groups)?;
    if y_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predicted relevance"));
    }
    let mut policy = RankingPolicy::from_order(&descending_order(y_hat))?;
    let mut beta = cfg.beta0;
    if cfg.lambda > 0.0 {
        for k in 1..=cfg.iters {
            beta = cfg.beta0 / ((k + 1) as f64).sqrt();
            let exposure = groups.exposures(&policy, b)?;
            let mu = moreau_owa_gradient(&cfg.weights, &exposure, SmoothingParam::new(beta)?)?;
            let lifted = groups.broadcast(&mu);
            let scores: Vec<f64> = y_hat
                .iter()
                .zip(&lifted)
                .map(|(y, m)| (1.0 - cfg.lambda) * y + cfg.lambda * m)
                .collect();
            let vertex = RankingPolicy::from_order(&descending_order(&scores))?;
            policy.blend(&vertex, 2.0 / (k as f64 + 2.0));
        }
    }
    // with lambda = 0 every linear subproblem returns the starting vertex
    let objective = fair_ranking_objective(&policy, y_hat, groups, b, cfg.lambda, &cfg.weights)?;
    Ok(FairRankingSolution {
        policy,
        objective,
        iterations: cfg.iters,
        final_beta: beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::owa::fair_gini_weights;

    #[test]
    fn dcg_bias_values() {
        let b = dcg_position_bias(3).unwrap();
        assert!((b.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!((b.as_slice()[1] - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((b.as_slice()[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantile_groups_are_balanced() {
        let v: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        let g = GroupStructure::by_quantiles(&v, 3).unwrap();
        let s = g.sizes();
        assert_eq!(s.iter().sum::<usize>(), 10);
        assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    #[test]
    fn lambda_zero_keeps_sorted_policy() {
        let y = [0.2, 0.9, 0.5];
        let groups = GroupStructure::new(vec![0, 1, 1]).unwrap();
        let b = dcg_position_bias(3).unwrap();
        let cfg = FairRankingConfig {
            lambda: 0.0,
            weights: fair_gini_weights(2).unwrap(),
            beta0: 1.0,
            iters: 50,
        };
        let sol = solve_fair_ranking_fw(&y, &groups, &b, &cfg).unwrap();
        assert_eq!(sol.policy, RankingPolicy::from_order(&[1, 2, 0]).unwrap());
    }

    #[test]
    fn policy_stays_doubly_stochastic() {
        let y = [0.3, 0.1, 0.8, 0.4, 0.6];
        let groups = GroupStructure::new(vec![0, 1, 0, 1, 1]).unwrap();
        let b = dcg_position_bias(5).unwrap();
        for lambda in [0.25, 0.5, 1.0] {
            let cfg = FairRankingConfig {
                lambda,
                weights: fair_gini_weights(2).unwrap(),
                beta0: 0.5,
                iters: 120,
            };
            let sol = solve_fair_ranking_fw(&y, &groups, &b, &cfg).unwrap();
            assert!(sol.policy.is_doubly_stochastic(1e-10));
        }
    }
}
