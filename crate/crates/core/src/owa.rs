//! Ordered weighted averaging: evaluation, subgradients and fair weight
//! construction.
//!
//! Weights are indexed by ascending rank: `w[0]` multiplies the smallest
//! criterion value. Fair weights are strictly decreasing, so the worst-off
//! criterion always receives the largest weight.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Validated OWA weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OwaWeights {
    w: Vec<f64>,
    fair: bool,
}

impl OwaWeights {
    /// Validates nonnegativity and unit sum; `fair` is derived from strict decrease.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("owa weights"));
        }
        if let Some(v) = w.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidWeights(format!("negative entry {v}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        let fair = w.windows(2).all(|p| p[0] > p[1]);
        Ok(Self { w, fair })
    }

    /// Like [`OwaWeights::new`] but rejects weights that are not strictly decreasing.
    pub fn new_fair(w: Vec<f64>) -> Result<Self> {
        let weights = Self::new(w)?;
        if !weights.fair {
            return Err(Error::InvalidWeights(
                "fair weights must be strictly decreasing".into(),
            ));
        }
        Ok(weights)
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        // 1/m summed m times can drift by an ulp or two; absorb it in the last entry.
        let mut w = vec![1.0 / m as f64; m];
        let head: f64 = w[..m - 1].iter().sum();
        w[m - 1] = 1.0 - head;
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn is_fair(&self) -> bool {
        self.fair
    }
}

/// Squared Gini weights `w_j ∝ ((m + 1 - j) / m)^2`, normalized, strictly decreasing.
pub fn fair_gini_weights(m: usize) -> Result<OwaWeights> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let raw: Vec<f64> = (1..=m)
        .map(|j| {
            let r = (m + 1 - j) as f64 / m as f64;
            r * r
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // renormalize residual rounding into the largest entry
    let drift = 1.0 - w.iter().sum::<f64>();
    w[0] += drift;
    OwaWeights::new(w)
}

/// Ascending sort permutation of a criteria vector, with stable ties.
///
/// `sigma[k]` is the index of the k-th smallest entry; `sigma_inv[i]` is the
/// ascending rank of entry `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortPermutation {
    pub sigma: Vec<usize>,
    pub sigma_inv: Vec<usize>,
}

impl SortPermutation {
    pub fn ascending(y: &[f64]) -> Self {
        let mut sigma: Vec<usize> = (0..y.len()).collect();
        sigma.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let mut sigma_inv = vec![0; y.len()];
        for (rank, &i) in sigma.iter().enumerate() {
            sigma_inv[i] = rank;
        }
        Self { sigma, sigma_inv }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.sigma.iter().map(|&i| y[i]).collect()
    }
}

/// `w^T tau(y)` with `tau` the ascending sort.
pub fn owa_value(w: &OwaWeights, y: &[f64]) -> Result<f64> {
    check_len(w.len(), y.len())?;
    let perm = SortPermutation::ascending(y);
    Ok(perm
        .sigma
        .iter()
        .zip(w.as_slice())
        .map(|(&i, wk)| wk * y[i])
        .sum())
}

/// Supergradient of the (concave) OWA at `y`: entry `i` receives the weight of its
/// ascending rank. Exact gradient when the entries of `y` are distinct.
pub fn owa_subgradient(w: &OwaWeights, y: &[f64]) -> Result<Vec<f64>> {
    check_len(w.len(), y.len())?;
    let perm = SortPermutation::ascending(y);
    let ws = w.as_slice();
    Ok(perm.sigma_inv.iter().map(|&rank| ws[rank]).collect())
}

/// Objective matrix `C` whose `m` rows parametrize linear criteria over `n` decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaMatrix {
    data: DMatrix<f64>,
}

impl CriteriaMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "criteria matrix needs m >= 1 and n >= 1".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("criteria matrix"));
        }
        Ok(Self { data })
    }

    pub fn from_row_slice(m: usize, n: usize, values: &[f64]) -> Result<Self> {
        check_len(m * n, values.len())?;
        Self::new(DMatrix::from_row_slice(m, n, values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::from_row_slice(m, n, &flat)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Row-major flattening (criterion-major).
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m() * self.n());
        for i in 0..self.m() {
            for j in 0..self.n() {
                out.push(self.data[(i, j)]);
            }
        }
        out
    }

    /// `C x`
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), x.len())?;
        let xv = DVector::from_column_slice(x);
        Ok((&self.data * xv).as_slice().to_vec())
    }

    /// `C^T g`
    pub fn apply_transpose(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.m(), g.len())?;
        let gv = DVector::from_column_slice(g);
        Ok((self.data.tr_mul(&gv)).as_slice().to_vec())
    }

    /// Max absolute row sum (the induced infinity norm).
    pub fn norm_inf(&self) -> f64 {
        self.data
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `OWA_w(C x)`
pub fn owa_of_decision(w: &OwaWeights, c: &CriteriaMatrix, x: &[f64]) -> Result<f64> {
    check_len(w.len(), c.m())?;
    owa_value(w, &c.apply(x)?)
}

/// Supergradient of `x -> OWA_w(C x)`: `C^T owa_subgradient(w, C x)`.
pub fn owa_decision_subgradient(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_len(w.len(), c.m())?;
    let y = c.apply(x)?;
    c.apply_transpose(&owa_subgradient(w, &y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w3() -> OwaWeights {
        OwaWeights::new(vec![0.5, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn value_matches_hand_sorted_sum() {
        let v = owa_value(&w3(), &[3.0, 1.0, 2.0]).unwrap();
        assert!((v - 1.7).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_give_mean() {
        let w = OwaWeights::uniform(4).unwrap();
        let y = [4.0, -1.0, 2.5, 0.5];
        let v = owa_value(&w, &y).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_criteria_return_constant() {
        let v = owa_value(&w3(), &[2.5; 3]).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn subgradient_assigns_rank_weights() {
        let g = owa_subgradient(&w3(), &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(g, vec![0.2, 0.5, 0.3]);
        let w2 = OwaWeights::new(vec![0.7, 0.3]).unwrap();
        assert_eq!(owa_subgradient(&w2, &[1.0, 2.0]).unwrap(), vec![0.7, 0.3]);
    }

    #[test]
    fn subgradient_on_ties_is_stable() {
        let w = OwaWeights::uniform(3).unwrap();
        let g = owa_subgradient(&w, &[1.0, 1.0, 1.0]).unwrap();
        for (gi, wi) in g.iter().zip(w.as_slice()) {
            assert_eq!(gi, wi);
        }
        // stable: equal entries keep index order, so index 0 gets rank 0
        let g = owa_subgradient(&w3(), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g, vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn gini_weights_small_cases() {
        assert_eq!(fair_gini_weights(1).unwrap().as_slice(), &[1.0]);
        let w2 = fair_gini_weights(2).unwrap();
        assert!((w2.as_slice()[0] - 0.8).abs() < 1e-12);
        assert!((w2.as_slice()[1] - 0.2).abs() < 1e-12);
        let w3 = fair_gini_weights(3).unwrap();
        let expect = [9.0 / 14.0, 4.0 / 14.0, 1.0 / 14.0];
        for (a, b) in w3.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(w3.is_fair());
        assert!(fair_gini_weights(0).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(OwaWeights::new(vec![0.6, 0.6]).is_err());
        assert!(OwaWeights::new(vec![1.2, -0.2]).is_err());
        assert!(OwaWeights::new(vec![]).is_err());
        assert!(OwaWeights::new(vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(OwaWeights::new_fair(vec![0.5, 0.5]).is_err());
        assert!(!OwaWeights::new(vec![0.5, 0.5]).unwrap().is_fair());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            owa_value(&w3(), &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let c = CriteriaMatrix::identity(2).unwrap();
        assert!(owa_of_decision(&w3(), &c, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn decision_composition() {
        let w = OwaWeights::new(vec![0.7, 0.3]).unwrap();
        let c = CriteriaMatrix::identity(2).unwrap();
        let v = owa_of_decision(&w, &c, &[2.0, 5.0]).unwrap();
        assert!((v - 2.9).abs() < 1e-12);
        let single = CriteriaMatrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let one = OwaWeights::new(vec![1.0]).unwrap();
        let v = owa_of_decision(&one, &single, &[0.2, 0.3, 0.5]).unwrap();
        assert!((v - (0.2 - 0.6 + 1.5)).abs() < 1e-12);
        let g = owa_decision_subgradient(&one, &single, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(g, vec![1.0, -2.0, 3.0]);
    }
}
