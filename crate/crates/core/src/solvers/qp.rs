//! The permutation-constrained reformulation of OWA maximization over the
//! simplex, with optional quadratic smoothing:
//!
//! ```text
//! max_{x in simplex, y, z}  z - eps (|x|^2 + |y|^2 + z^2)
//!   s.t. y = C x,  z <= w_tau . y  for every permutation tau
//! ```
//!
//! `y` is eliminated, so the solver works on `u = (x, z)` in standard form
//! `min 1/2 u^T Q u + p^T u` s.t. `G u <= h`, `A u = b`, solved by a
//! Mehrotra predictor-corrector interior point method followed by an
//! active-set polish.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::owa::{owa_of_decision, CriteriaMatrix, OwaWeights};

use super::SolveReport;

/// Largest criteria count for which the `m!` constraints are built.
pub const QP_MAX_CRITERIA: usize = 6;

const IPM_TOL: f64 = 1e-11;
const IPM_MAX_ITERS: usize = 200;
const IPM_MU_FLOOR: f64 = 1e-16;
/// Residual below which a stalled interior point is handed to the polish.
const IPM_STALL_TOL: f64 = 1e-4;
/// Residual the returned solution must reach.
const ACCEPT_TOL: f64 = 1e-7;
/// Slack threshold for calling an inequality active.
pub(crate) const ACTIVE_TOL: f64 = 1e-6;

pub fn permutation_count(m: usize) -> usize {
    (1..=m).product()
}

/// Solved instance of the smoothed reformulation, with everything the KKT
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub report: SolveReport,
    pub epsilon: f64,
    /// All permuted weight vectors `w_tau`, one per constraint row.
    pub permuted_weights: Vec<Vec<f64>>,
    /// Primal `u = (x, z)`.
    pub u: Vec<f64>,
    /// Inequality multipliers: the permutation rows first, then `-x_i <= 0`.
    pub lambda: Vec<f64>,
    pub nu: f64,
    pub slack: Vec<f64>,
    /// Indices of active inequality rows.
    pub active: Vec<usize>,
    pub kkt_residual: f64,
    /// Set when the active constraints are linearly dependent.
    pub degenerate: bool,
}

impl QpSolution {
    pub fn x(&self) -> &[f64] {
        &self.report.solution
    }

    pub fn z(&self) -> f64 {
        self.u[self.u.len() - 1]
    }

    pub fn constraint_count(&self) -> usize {
        self.permuted_weights.len()
    }
}

pub(crate) struct QpProblem {
    pub q: DMatrix<f64>,
    pub p: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub(crate) fn build_problem(
    perms: &[Vec<f64>],
    c: &CriteriaMatrix,
    epsilon: f64,
) -> QpProblem {
    let n = c.n();
    let nv = n + 1;
    let cm = c.matrix();
    let mut q = DMatrix::zeros(nv, nv);
    if epsilon > 0.0 {
        let ctc = cm.tr_mul(cm);
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = 2.0 * epsilon * (ctc[(i, j)] + if i == j { 1.0 } else { 0.0 });
            }
        }
        q[(n, n)] = 2.0 * epsilon;
    }
    let mut p = DVector::zeros(nv);
    p[n] = -1.0;
    let ni = perms.len() + n;
    let mut g = DMatrix::zeros(ni, nv);
    for (r, wt) in perms.iter().enumerate() {
        // z - w_tau^T C x <= 0
        let wc = cm.tr_mul(&DVector::from_column_slice(wt));
        for j in 0..n {
            g[(r, j)] = -wc[j];
        }
        g[(r, n)] = 1.0;
    }
    for i in 0..n {
        g[(perms.len() + i, i)] = -1.0;
    }
    let h = DVector::zeros(ni);
    let mut a = DMatrix::zeros(1, nv);
    for j in 0..n {
        a[(0, j)] = 1.0;
    }
    let b = DVector::from_element(1, 1.0);
    QpProblem { q, p, g, h, a, b }
}

struct IpmState {
    u: DVector<f64>,
    s: DVector<f64>,
    lam: DVector<f64>,
    nu: DVector<f64>,
}

fn solve_newton(
    prob: &QpProblem,
    st: &IpmState,
    rd: &DVector<f64>,
    re: &DVector<f64>,
    ri: &DVector<f64>,
    rc: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let nv = prob.q.nrows();
    let ne = prob.a.nrows();
    let d = st.lam.component_div(&st.s);
    let mut gd = prob.g.clone();
    for (r, mut row) in gd.row_iter_mut().enumerate() {
        row *= d[r];
    }
    let mut h = &prob.q + prob.g.tr_mul(&gd);
    // tiny primal regularization keeps degenerate LPs factorizable
    let reg = 1e-13 * (1.0 + h.diagonal().amax());
    for i in 0..nv {
        h[(i, i)] += reg;
    }
    let mut kkt = DMatrix::zeros(nv + ne, nv + ne);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&h);
    kkt.view_mut((0, nv), (nv, ne)).copy_from(&prob.a.transpose());
    kkt.view_mut((nv, 0), (ne, nv)).copy_from(&prob.a);
    // S^{-1} (Lambda r_i - r_c)
    let corr = (st.lam.component_mul(ri) - rc).component_div(&st.s);
    let top = -rd - prob.g.tr_mul(&corr);
    let mut rhs = DVector::zeros(nv + ne);
    rhs.rows_mut(0, nv).copy_from(&top);
    rhs.rows_mut(nv, ne).copy_from(&(-re));
    if kkt.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => kkt.svd(true, true).solve(&rhs, 1e-14).ok()?,
    };
    let du = sol.rows(0, nv).into_owned();
    let dnu = sol.rows(nv, ne).into_owned();
    let ds = -ri - &prob.g * &du;
    let dlam = (d.component_mul(&(&prob.g * &du))) + corr;
    Some((du, ds, dlam, dnu))
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

fn residuals(prob: &QpProblem, st: &IpmState) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let rd = &prob.q * &st.u + &prob.p + prob.g.tr_mul(&st.lam) + prob.a.tr_mul(&st.nu);
    let re = &prob.a * &st.u - &prob.b;
    let ri = &prob.g * &st.u + &st.s - &prob.h;
    (rd, re, ri)
}

/// Returns the final iterate and its scaled residual; a stalled run is
/// returned too as long as the residual is below `IPM_STALL_TOL`.
fn interior_point(prob: &QpProblem, u0: DVector<f64>) -> Result<(IpmState, f64)> {
    let ni = prob.g.nrows();
    let s0 = (&prob.h - &prob.g * &u0).map(|v| v.max(1e-2));
    let mut st = IpmState {
        u: u0,
        s: s0,
        lam: DVector::from_element(ni, 1.0),
        nu: DVector::zeros(prob.a.nrows()),
    };
    for _ in 0..IPM_MAX_ITERS {
        let (rd, re, ri) = residuals(prob, &st);
        let mu = st.s.dot(&st.lam) / ni as f64;
        // dual residual is measured relative to the size of G^T lambda
        let scale = 1.0 + prob.p.amax() + prob.g.amax() * st.lam.amax();
        let primal_ok = re.amax() <= IPM_TOL && ri.amax() <= IPM_TOL;
        if primal_ok && rd.amax() <= IPM_TOL * scale && mu <= IPM_TOL {
            return Ok((st, 0.0));
        }
        if mu <= IPM_MU_FLOOR {
            break;
        }
        // predictor
        let rc_aff = st.s.component_mul(&st.lam);
        let (du_a, ds_a, dl_a, _) = solve_newton(prob, &st, &rd, &re, &ri, &rc_aff)
            .ok_or_else(|| Error::SolverFailure("singular interior point system".into()))?;
        let alpha_aff = max_step(&st.s, &ds_a).min(max_step(&st.lam, &dl_a));
        let mu_aff = (&st.s + alpha_aff * &ds_a).dot(&(&st.lam + alpha_aff * &dl_a)) / ni as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        // corrector
        let rc = rc_aff + ds_a.component_mul(&dl_a) - DVector::from_element(ni, sigma * mu);
        let _ = du_a;
        let (du, ds, dl, dnu) = solve_newton(prob, &st, &rd, &re, &ri, &rc)
            .ok_or_else(|| Error::SolverFailure("singular interior point system".into()))?;
        let alpha = (0.99 * max_step(&st.s, &ds).min(max_step(&st.lam, &dl))).min(1.0);
        st.u += alpha * du;
        st.s += alpha * ds;
        st.lam += alpha * dl;
        st.nu += alpha * dnu;
        if st.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interior point iterate"));
        }
    }
    let (rd, re, ri) = residuals(prob, &st);
    let mu = st.s.dot(&st.lam) / ni as f64;
    let scale = 1.0 + prob.p.amax() + prob.g.amax() * st.lam.amax();
    let worst = (rd.amax() / scale).max(re.amax()).max(ri.amax()).max(mu);
    if worst <= IPM_STALL_TOL {
        return Ok((st, worst));
    }
    Err(Error::SolverFailure(format!(
        "interior point did not converge (residual {worst:.3e})"
    )))
}

/// The symmetric KKT matrix of the equality-constrained problem on the
/// active set: `[[Q, G_K^T, A^T], [G_K, 0, 0], [A, 0, 0]]`.
pub(crate) fn active_kkt_matrix(prob: &QpProblem, active: &[usize]) -> DMatrix<f64> {
    let nv = prob.q.nrows();
    let na = active.len();
    let ne = prob.a.nrows();
    let dim = nv + na + ne;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (nv, nv)).copy_from(&prob.q);
    for (r, &row) in active.iter().enumerate() {
        for j in 0..nv {
            k[(nv + r, j)] = prob.g[(row, j)];
            k[(j, nv + r)] = prob.g[(row, j)];
        }
    }
    for e in 0..ne {
        for j in 0..nv {
            k[(nv + na + e, j)] = prob.a[(e, j)];
            k[(j, nv + na + e)] = prob.a[(e, j)];
        }
    }
    k
}

/// Rank test of the active constraint rows stacked with the equalities.
pub(crate) fn active_rows_dependent(prob: &QpProblem, active: &[usize]) -> bool {
    let nv = prob.q.nrows();
    let rows = active.len() + prob.a.nrows();
    if rows > nv {
        return true;
    }
    let mut m = DMatrix::zeros(rows, nv);
    for (r, &row) in active.iter().enumerate() {
        m.row_mut(r).copy_from(&prob.g.row(row));
    }
    for e in 0..prob.a.nrows() {
        m.row_mut(active.len() + e).copy_from(&prob.a.row(e));
    }
    let sv = m.singular_values();
    let smax = sv.max();
    sv.min() <= 1e-10 * smax.max(1.0)
}

fn kkt_residual(prob: &QpProblem, st: &IpmState) -> f64 {
    let (rd, re, _) = residuals(prob, st);
    let gu = &prob.g * &st.u - &prob.h;
    let infeas = gu.iter().fold(0.0_f64, |a, v| a.max(*v));
    let comp = gu
        .iter()
        .zip(st.lam.iter())
        .fold(0.0_f64, |a, (g, l)| a.max((g * l).abs()));
    let dual_neg = st.lam.iter().fold(0.0_f64, |a, l| a.max(-l));
    rd.amax().max(re.amax()).max(infeas).max(comp).max(dual_neg)
}

/// Re-solves the equality system on the active set; keeps the result only if it
/// is primal and dual feasible and has a smaller KKT residual.
fn polish(prob: &QpProblem, st: &IpmState, active: &[usize]) -> Option<IpmState> {
    let nv = prob.q.nrows();
    let na = active.len();
    let ne = prob.a.nrows();
    let k = active_kkt_matrix(prob, active);
    let mut rhs = DVector::zeros(nv + na + ne);
    rhs.rows_mut(0, nv).copy_from(&(-&prob.p));
    for (r, &row) in active.iter().enumerate() {
        rhs[nv + r] = prob.h[row];
    }
    rhs.rows_mut(nv + na, ne).copy_from(&prob.b);
    let sol = k.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let u = sol.rows(0, nv).into_owned();
    let mut lam = DVector::zeros(prob.g.nrows());
    for (r, &row) in active.iter().enumerate() {
        lam[row] = sol[nv + r];
    }
    let nu = sol.rows(nv + na, ne).into_owned();
    let s = (&prob.h - &prob.g * &u).map(|v| v.max(0.0));
    let cand = IpmState { u, s, lam, nu };
    if kkt_residual(prob, &cand) < kkt_residual(prob, st) {
        Some(cand)
    } else {
        None
    }
}

/// Solves the smoothed permutation reformulation. `epsilon = 0` gives the
/// exact linear program.
pub fn solve_owa_qp_reformulation(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    epsilon: f64,
) -> Result<QpSolution> {
    check_len(w.len(), c.m())?;
    let m = c.m();
    if m > QP_MAX_CRITERIA {
        return Err(Error::CapacityExceeded {
            m,
            limit: QP_MAX_CRITERIA,
            constraints: permutation_count(m),
        });
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    let ws = w.as_slice();
    let permuted_weights: Vec<Vec<f64>> = (0..m)
        .permutations(m)
        .map(|perm| perm.iter().map(|&k| ws[k]).collect())
        .collect();
    let prob = build_problem(&permuted_weights, c, epsilon);
    let n = c.n();
    let x0 = vec![1.0 / n as f64; n];
    let y0 = c.apply(&x0)?;
    let z0 = y0.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut u0 = DVector::from_column_slice(&x0).insert_row(n, z0);
    u0[n] = z0;
    let (mut st, ipm_residual) = interior_point(&prob, u0)?;
    let find_active = |st: &IpmState| -> Vec<usize> {
        (0..prob.g.nrows())
            .filter(|&r| st.s[r] <= ACTIVE_TOL)
            .collect()
    };
    let mut active = find_active(&st);
    if let Some(polished) = polish(&prob, &st, &active) {
        st = polished;
        active = find_active(&st);
    }
    let degenerate = active_rows_dependent(&prob, &active);
    let kkt = kkt_residual(&prob, &st);
    if ipm_residual > ACCEPT_TOL && kkt > ACCEPT_TOL {
        return Err(Error::SolverFailure(format!(
            "interior point did not converge (residual {:.3e})",
            ipm_residual.min(kkt)
        )));
    }
    let x: Vec<f64> = st.u.rows(0, n).iter().copied().collect();
    let z = st.u[n];
    let y = c.apply(&x)?;
    let objective = z
        - epsilon
            * (x.iter().map(|v| v * v).sum::<f64>() + y.iter().map(|v| v * v).sum::<f64>() + z * z);
    debug_assert!(owa_of_decision(w, c, &x).is_ok());
    Ok(QpSolution {
        report: SolveReport {
            solution: x,
            objective,
            iterations: 0,
            final_step: 0.0,
            residual: kkt,
        },
        epsilon,
        permuted_weights,
        u: st.u.iter().copied().collect(),
        lambda: st.lam.iter().copied().collect(),
        nu: st.nu[0],
        slack: st.s.iter().copied().collect(),
        active,
        kkt_residual: kkt,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::owa::{fair_gini_weights, owa_of_decision};

    #[test]
    fn constraint_count_is_factorial() {
        for (m, expect) in [(2, 2), (3, 6), (4, 24)] {
            let w = fair_gini_weights(m).unwrap();
            let c = CriteriaMatrix::from_row_slice(m, 2, &vec![0.5; 2 * m]).unwrap();
            let sol = solve_owa_qp_reformulation(&w, &c, 0.0).unwrap();
            assert_eq!(sol.constraint_count(), expect);
        }
    }

    #[test]
    fn refuses_more_than_six_criteria() {
        let w = fair_gini_weights(7).unwrap();
        let c = CriteriaMatrix::from_row_slice(7, 2, &[0.5; 14]).unwrap();
        assert!(matches!(
            solve_owa_qp_reformulation(&w, &c, 0.0),
            Err(Error::CapacityExceeded { m: 7, .. })
        ));
    }

    #[test]
    fn symmetric_lp_case() {
        let w = OwaWeights::new(vec![0.7, 0.3]).unwrap();
        let c = CriteriaMatrix::identity(2).unwrap();
        let sol = solve_owa_qp_reformulation(&w, &c, 0.0).unwrap();
        assert!((sol.x()[0] - 0.5).abs() < 1e-7);
        assert!((sol.z() - 0.5).abs() < 1e-7);
        assert!(sol.kkt_residual <= 1e-7);
    }

    #[test]
    fn lp_objective_binds_at_owa_value() {
        let w = fair_gini_weights(3).unwrap();
        let c = CriteriaMatrix::from_rows(&[
            vec![0.9, 0.1, 0.5, 0.3],
            vec![0.2, 0.8, 0.4, 0.6],
            vec![0.5, 0.5, 0.1, 0.9],
        ])
        .unwrap();
        let sol = solve_owa_qp_reformulation(&w, &c, 0.0).unwrap();
        let owa = owa_of_decision(&w, &c, sol.x()).unwrap();
        assert!((owa - sol.report.objective).abs() < 1e-6);
    }
}
