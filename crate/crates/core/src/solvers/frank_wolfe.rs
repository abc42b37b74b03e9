use crate::error::{check_len, Error, Result};
use crate::geometry::{moreau_owa_gradient, moreau_value_from_gradient, project_simplex, SmoothingParam};
use crate::owa::{CriteriaMatrix, OwaWeights};

use super::{dot, norm2, SolveReport};

/// Smoothing scale used by the Moreau route unless configured otherwise.
pub const MOREAU_BETA_DEFAULT: f64 = 0.05;

fn smoothed_objective_and_gradient(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    beta: SmoothingParam,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let y = c.apply(x)?;
    let q = moreau_owa_gradient(w, &y, beta)?;
    let value = moreau_value_from_gradient(&q, &y, beta);
    Ok((value, c.apply_transpose(&q)?))
}

/// Frank-Wolfe on the Moreau-smoothed problem over the simplex with the
/// open-loop step `2 / (k + 2)`; the linear subproblem is an argmax.
///
/// Returns the best iterate by smoothed objective. `residual` is the
/// Frank-Wolfe duality gap at that iterate.
pub fn solve_owa_moreau_frankwolfe(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    beta: SmoothingParam,
    iters: usize,
) -> Result<SolveReport> {
    check_len(w.len(), c.m())?;
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    let n = c.n();
    let mut x = vec![1.0 / n as f64; n];
    let mut best_x = x.clone();
    let mut best = f64::NEG_INFINITY;
    let mut best_gap = f64::INFINITY;
    let mut step = 0.0;
    for k in 0..=iters {
        let (value, g) = smoothed_objective_and_gradient(w, c, beta, &x)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("Frank-Wolfe objective"));
        }
        let (vertex, gmax) = g
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        let gap = gmax - dot(&g, &x);
        if value > best {
            best = value;
            best_gap = gap;
            best_x.clone_from(&x);
        }
        if k == iters {
            break;
        }
        step = 2.0 / (k as f64 + 2.0);
        for xi in x.iter_mut() {
            *xi *= 1.0 - step;
        }
        x[vertex] += step;
    }
    Ok(SolveReport {
        solution: best_x,
        objective: best,
        iterations: iters,
        final_step: step,
        residual: best_gap,
    })
}

/// Projected gradient ascent on the Moreau-smoothed problem. This is the
/// forward pass whose fixed point is differentiated in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoreauPgdConfig {
    pub beta: f64,
    /// Requested step. With `cap_step` it is lowered to `beta / |C|_F^2` so
    /// the update map is a contraction on the smooth part.
    pub step: f64,
    pub cap_step: bool,
    pub max_iters: usize,
    /// Stop once `|U(x) - x| <= tol`.
    pub tol: f64,
    pub accelerate: bool,
}

impl Default for MoreauPgdConfig {
    fn default() -> Self {
        Self {
            beta: MOREAU_BETA_DEFAULT,
            step: 0.02,
            cap_step: true,
            max_iters: 5000,
            tol: 1e-9,
            accelerate: true,
        }
    }
}

impl MoreauPgdConfig {
    /// Fixed-budget schedule used as the training forward pass: plain projected
    /// gradient at step 0.02 with 300, 500 or 750 iterations for up to 3, 5 or
    /// more criteria, without the step cap or early stopping.
    pub fn training(m: usize) -> Self {
        let max_iters = match m {
            0..=3 => 300,
            4..=5 => 500,
            _ => 750,
        };
        Self {
            beta: MOREAU_BETA_DEFAULT,
            step: 0.02,
            cap_step: false,
            max_iters,
            tol: 0.0,
            accelerate: false,
        }
    }

    pub fn effective_step(&self, c: &CriteriaMatrix) -> f64 {
        let fro = c.frobenius_sq();
        if self.cap_step && fro > 0.0 {
            self.step.min(self.beta / fro)
        } else {
            self.step
        }
    }
}

/// One application of `U(x) = proj(x + step * C^T grad f_beta(C x))`.
pub(crate) fn pgd_update(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    beta: SmoothingParam,
    step: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let (_, g) = smoothed_objective_and_gradient(w, c, beta, x)?;
    let moved: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
    Ok(project_simplex(&moved))
}

fn fixed_point_residual(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    beta: SmoothingParam,
    step: f64,
    x: &[f64],
) -> Result<f64> {
    let ux = pgd_update(w, c, beta, step, x)?;
    let d: Vec<f64> = ux.iter().zip(x).map(|(a, b)| a - b).collect();
    Ok(norm2(&d))
}

/// Maximizes `f_beta(C x)` over the simplex. With `accelerate` the iteration is
/// FISTA with adaptive restart; the returned point is always an iterate of the
/// plain update map, so `residual` is `|U(x) - x|` at the solution.
pub fn solve_owa_moreau_pgd(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    cfg: &MoreauPgdConfig,
) -> Result<SolveReport> {
    check_len(w.len(), c.m())?;
    let beta = SmoothingParam::new(cfg.beta)?;
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let step = cfg.effective_step(c);
    let n = c.n();
    let mut x = vec![1.0 / n as f64; n];
    let mut anchor = x.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        let next = pgd_update(w, c, beta, step, &anchor)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Moreau projected gradient iterate"));
        }
        if cfg.accelerate {
            let ascent: f64 = next
                .iter()
                .zip(&anchor)
                .zip(&x)
                .map(|((nx, a), px)| (nx - a) * (nx - px))
                .sum();
            if ascent < 0.0 {
                // momentum opposes the gradient step: restart
                t = 1.0;
                anchor.clone_from(&x);
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / t_next;
            anchor = next
                .iter()
                .zip(&x)
                .map(|(nx, px)| nx + mom * (nx - px))
                .collect();
            t = t_next;
        } else {
            anchor.clone_from(&next);
        }
        let moved: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        x = next;
        if norm2(&moved) <= cfg.tol {
            residual = fixed_point_residual(w, c, beta, step, &x)?;
            if residual <= cfg.tol {
                break;
            }
        }
    }
    if !residual.is_finite() || residual > cfg.tol {
        residual = fixed_point_residual(w, c, beta, step, &x)?;
    }
    let y = c.apply(&x)?;
    let q = moreau_owa_gradient(w, &y, beta)?;
    Ok(SolveReport {
        objective: moreau_value_from_gradient(&q, &y, beta),
        solution: x,
        iterations,
        final_step: step,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::owa::fair_gini_weights;

    #[test]
    fn fw_single_criterion_gap_decays() {
        let c = CriteriaMatrix::from_rows(&[vec![0.2, 1.0, 0.5]]).unwrap();
        let w = OwaWeights::new(vec![1.0]).unwrap();
        let beta = SmoothingParam::new(0.1).unwrap();
        for k in [10, 100, 1000] {
            let r = solve_owa_moreau_frankwolfe(&w, &c, beta, k).unwrap();
            // smoothed objective is c.x + beta/2 for m = 1
            let gap = 1.0 + 0.05 - r.objective;
            assert!(gap <= 2.0 * 2.0 / (k as f64 + 2.0) + 1e-12, "k={k} gap={gap}");
        }
    }

    #[test]
    fn fw_symmetric_split() {
        let c = CriteriaMatrix::identity(2).unwrap();
        let w = fair_gini_weights(2).unwrap();
        let r = solve_owa_moreau_frankwolfe(&w, &c, SmoothingParam::new(1e-3).unwrap(), 500)
            .unwrap();
        assert!((r.solution[0] - 0.5).abs() < 1e-3, "{:?}", r.solution);
    }

    #[test]
    fn pgd_converges_to_fixed_point() {
        let c = CriteriaMatrix::from_rows(&[
            vec![0.9, 0.1, 0.5, 0.3],
            vec![0.2, 0.8, 0.4, 0.6],
            vec![0.5, 0.5, 0.1, 0.9],
        ])
        .unwrap();
        let w = fair_gini_weights(3).unwrap();
        for accelerate in [false, true] {
            let cfg = MoreauPgdConfig {
                accelerate,
                max_iters: 50_000,
                ..Default::default()
            };
            let r = solve_owa_moreau_pgd(&w, &c, &cfg).unwrap();
            assert!(r.residual <= 1e-9, "accelerate={accelerate} residual={}", r.residual);
            assert!((r.solution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
