use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::owa::{CriteriaMatrix, OwaWeights};
use crate::solvers::qp::{active_kkt_matrix, active_rows_dependent, build_problem};
use crate::solvers::{solve_owa_qp_reformulation, QpSolution};

use super::VectorJacobianHook;

#[derive(Debug, Clone, PartialEq)]
pub struct KktBackward {
    /// Row-major `m x n` cotangent on `C`.
    pub grad_c: Vec<f64>,
    /// Active constraints were dependent and a least-squares solve was used.
    pub least_squares: bool,
}

/// Differentiates the smoothed permutation reformulation through the KKT
/// conditions restricted to the active set. `C` enters through the coupling
/// `y = C x`, i.e. through the `|C x|^2` term and every active
/// `z <= w_tau^T C x` row.
pub fn backward_qp_kkt(c: &CriteriaMatrix, sol: &QpSolution, g: &[f64]) -> Result<KktBackward> {
    let (m, n) = (c.m(), c.n());
    check_len(n, g.len())?;
    check_len(n, sol.x().len())?;
    if g.iter().all(|v| *v == 0.0) {
        return Ok(KktBackward {
            grad_c: vec![0.0; m * n],
            least_squares: false,
        });
    }
    let prob = build_problem(&sol.permuted_weights, c, sol.epsilon);
    let active = &sol.active;
    let k = active_kkt_matrix(&prob, active);
    let nv = n + 1;
    let dim = k.nrows();
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = g[j];
    }
    let dependent = sol.degenerate || active_rows_dependent(&prob, active);
    let direct = if dependent { None } else { k.clone().lu().solve(&rhs) };
    let (a, least_squares) = match direct {
        Some(a) if a.iter().all(|v| v.is_finite()) => (a, false),
        _ => (
            k.svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::SolverFailure(e.to_string()))?,
            true,
        ),
    };
    let ax: Vec<f64> = a.rows(0, n).iter().copied().collect();
    let x = sol.x();
    let cx = c.apply(x)?;
    let cax = c.apply(&ax)?;
    let eps = sol.epsilon;
    let mut grad_c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            grad_c[i * n + j] = -2.0 * eps * (cx[i] * ax[j] + cax[i] * x[j]);
        }
    }
    let perm_rows = sol.permuted_weights.len();
    for (r, &row) in active.iter().enumerate() {
        if row >= perm_rows {
            continue;
        }
        let wt = &sol.permuted_weights[row];
        let lam = sol.lambda[row];
        let alam = a[nv + r];
        for i in 0..m {
            for j in 0..n {
                grad_c[i * n + j] += wt[i] * (lam * ax[j] + alam * x[j]);
            }
        }
    }
    if grad_c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KKT cotangent"));
    }
    Ok(KktBackward {
        grad_c,
        least_squares,
    })
}

/// The smoothed reformulation as a differentiable layer.
#[derive(Debug, Clone)]
pub struct QpLayer {
    pub c: CriteriaMatrix,
    pub solution: QpSolution,
}

impl QpLayer {
    pub fn forward(w: &OwaWeights, c: &CriteriaMatrix, epsilon: f64) -> Result<Self> {
        Ok(Self {
            c: c.clone(),
            solution: solve_owa_qp_reformulation(w, c, epsilon)?,
        })
    }
}

impl VectorJacobianHook for QpLayer {
    fn solution(&self) -> &[f64] {
        self.solution.x()
    }

    fn backward(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(backward_qp_kkt(&self.c, &self.solution, g)?.grad_c)
    }
}
