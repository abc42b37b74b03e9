use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::geometry::{moreau_owa_projection, project_simplex_with_support, SmoothingParam};
use crate::owa::{CriteriaMatrix, OwaWeights};
use crate::solvers::{solve_owa_moreau_pgd, MoreauPgdConfig};

use super::VectorJacobianHook;

/// Damping used when `I - Phi` is singular.
pub const DAMPING: f64 = 0.99;

const SINGULAR_TOL: f64 = 1e-10;

/// Jacobians of the update map `U(x, C) = proj(x + alpha C^T q(C x))` at a
/// fixed point. `psi` columns are indexed by the row-major entries of `C`.
#[derive(Debug, Clone)]
pub struct FixedPointJacobians {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointBackward {
    /// Row-major `m x n` cotangent on `C`.
    pub grad_c: Vec<f64>,
    /// `|U(x*) - x*|` at the point that was differentiated.
    pub residual: f64,
    /// The adjoint system was singular and the damped system was solved instead.
    pub damped: bool,
}

struct Linearization {
    /// smoothed OWA gradient at `C x`
    q: Vec<f64>,
    simplex: crate::geometry::SimplexProjection,
    perm: crate::geometry::PermutahedronProjection,
    residual: f64,
}

fn linearize(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    x: &[f64],
    beta: SmoothingParam,
    alpha: f64,
) -> Result<Linearization> {
    let y = c.apply(x)?;
    let perm = moreau_owa_projection(w, &y, beta)?;
    let q = perm.point.clone();
    let ctq = c.apply_transpose(&q)?;
    let t: Vec<f64> = x.iter().zip(&ctq).map(|(a, b)| a + alpha * b).collect();
    let simplex = project_simplex_with_support(&t);
    let residual = simplex
        .point
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(Linearization {
        q,
        simplex,
        perm,
        residual,
    })
}

fn phi_matrix(c: &CriteriaMatrix, lin: &Linearization, beta: f64, alpha: f64) -> DMatrix<f64> {
    let n = c.n();
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..n {
        // column j: J_simplex (e_j - (alpha / beta) C^T J_perm C e_j)
        let ce: Vec<f64> = c.matrix().column(j).iter().copied().collect();
        let jc = lin.perm.jacobian_apply(&ce);
        let back = c
            .apply_transpose(&jc)
            .expect("shapes agree by construction");
        let mut col: Vec<f64> = back.iter().map(|v| -alpha / beta * v).collect();
        col[j] += 1.0;
        let out = lin.simplex.jacobian_apply(&col);
        phi.set_column(j, &DVector::from_vec(out));
    }
    phi
}

/// Materializes `Phi = dU/dx` and `Psi = dU/dC` at `x`.
pub fn fixed_point_jacobians(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    x: &[f64],
    beta: f64,
    alpha: f64,
) -> Result<FixedPointJacobians> {
    check_len(c.n(), x.len())?;
    let beta_p = SmoothingParam::new(beta)?;
    let lin = linearize(w, c, x, beta_p, alpha)?;
    let (m, n) = (c.m(), c.n());
    let phi = phi_matrix(c, &lin, beta, alpha);
    let mut psi = DMatrix::zeros(n, m * n);
    for k in 0..m {
        let mut ek = vec![0.0; m];
        ek[k] = 1.0;
        // C^T J_q e_k with J_q = -(1 / beta) J_perm
        let jq: Vec<f64> = lin.perm.jacobian_apply(&ek).iter().map(|v| -v / beta).collect();
        let ctjq = c.apply_transpose(&jq)?;
        for j in 0..n {
            let mut dt: Vec<f64> = ctjq.iter().map(|v| alpha * x[j] * v).collect();
            dt[j] += alpha * lin.q[k];
            let col = lin.simplex.jacobian_apply(&dt);
            psi.set_column(k * n + j, &DVector::from_vec(col));
        }
    }
    Ok(FixedPointJacobians { phi, psi })
}

/// Implicit differentiation of the fixed point of one projected-gradient step
/// on the smoothed problem. Solves `(I - Phi)^T u = g` and contracts `u` with
/// `Psi` without forming `Psi`.
pub fn backward_fixed_point(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    x_star: &[f64],
    g: &[f64],
    beta: f64,
    alpha: f64,
) -> Result<FixedPointBackward> {
    check_len(w.len(), c.m())?;
    check_len(c.n(), x_star.len())?;
    check_len(c.n(), g.len())?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {alpha}")));
    }
    let beta_p = SmoothingParam::new(beta)?;
    let lin = linearize(w, c, x_star, beta_p, alpha)?;
    let (m, n) = (c.m(), c.n());
    if g.iter().all(|v| *v == 0.0) {
        return Ok(FixedPointBackward {
            grad_c: vec![0.0; m * n],
            residual: lin.residual,
            damped: false,
        });
    }
    let phi = phi_matrix(c, &lin, beta, alpha);
    let eye = DMatrix::<f64>::identity(n, n);
    let sys = (&eye - &phi).transpose();
    let rhs = DVector::from_column_slice(g);
    let sv = sys.clone().singular_values();
    let singular = sv.min() <= SINGULAR_TOL * sv.max().max(1.0);
    let (u, damped) = if singular {
        let damped_sys = (&eye - DAMPING * &phi).transpose();
        let u = damped_sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SolverFailure("damped adjoint system is singular".into()))?;
        (u, true)
    } else {
        let u = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SolverFailure("adjoint system is singular".into()))?;
        (u, false)
    };
    let v = lin.simplex.jacobian_apply(u.as_slice());
    let cv = c.apply(&v)?;
    let jqcv: Vec<f64> = lin.perm.jacobian_apply(&cv).iter().map(|s| -s / beta).collect();
    let mut grad_c = vec![0.0; m * n];
    for k in 0..m {
        for j in 0..n {
            grad_c[k * n + j] = alpha * (lin.q[k] * v[j] + jqcv[k] * x_star[j]);
        }
    }
    if grad_c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fixed-point cotangent"));
    }
    Ok(FixedPointBackward {
        grad_c,
        residual: lin.residual,
        damped,
    })
}

/// Smoothed OWA optimization over the simplex as a differentiable layer:
/// forward by projected gradient, backward by [`backward_fixed_point`].
#[derive(Debug, Clone)]
pub struct MoreauLayer {
    pub weights: OwaWeights,
    pub c: CriteriaMatrix,
    pub beta: f64,
    pub step: f64,
    pub x: Vec<f64>,
    pub residual: f64,
}

impl MoreauLayer {
    pub fn forward(w: &OwaWeights, c: &CriteriaMatrix, cfg: &MoreauPgdConfig) -> Result<Self> {
        let report = solve_owa_moreau_pgd(w, c, cfg)?;
        Ok(Self {
            weights: w.clone(),
            c: c.clone(),
            beta: cfg.beta,
            step: report.final_step,
            x: report.solution,
            residual: report.residual,
        })
    }

    pub fn backward_report(&self, g: &[f64]) -> Result<FixedPointBackward> {
        backward_fixed_point(&self.weights, &self.c, &self.x, g, self.beta, self.step)
    }
}

impl VectorJacobianHook for MoreauLayer {
    fn solution(&self) -> &[f64] {
        &self.x
    }

    fn backward(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_report(g)?.grad_c)
    }
}
