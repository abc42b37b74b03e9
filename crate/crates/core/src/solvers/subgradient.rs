use crate::error::{check_len, Error, Result};
use crate::geometry::project_simplex;
use crate::owa::{owa_subgradient, owa_value, CriteriaMatrix, OwaWeights};

use super::{norm2, SolveReport};

/// Step-size rule for projected subgradient ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Constant(f64),
    /// `alpha / sqrt(k + 1)`
    Diminishing(f64),
}

impl StepRule {
    fn at(self, k: usize) -> f64 {
        match self {
            StepRule::Constant(a) => a,
            StepRule::Diminishing(a) => a / ((k + 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientConfig {
    pub iters: usize,
    pub step: StepRule,
}

impl SubgradientConfig {
    /// Constant step 0.02 with 300 / 500 / 750 iterations for up to 3 / 5 / more criteria.
    pub fn for_criteria(m: usize) -> Self {
        let iters = match m {
            0..=3 => 300,
            4..=5 => 500,
            _ => 750,
        };
        Self {
            iters,
            step: StepRule::Constant(0.02),
        }
    }

    /// Long diminishing-step run used for reference optima and test-time decisions.
    pub fn precise() -> Self {
        Self {
            iters: 20_000,
            step: StepRule::Diminishing(0.5),
        }
    }
}

/// Maximizes `OWA_w(C x)` over the simplex by projected subgradient ascent,
/// returning the best iterate seen.
pub fn solve_owa_projected_subgradient(
    w: &OwaWeights,
    c: &CriteriaMatrix,
    cfg: &SubgradientConfig,
) -> Result<SolveReport> {
    check_len(w.len(), c.m())?;
    if cfg.iters == 0 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    let n = c.n();
    let mut x = vec![1.0 / n as f64; n];
    let mut best_x = x.clone();
    let mut best = owa_value(w, &c.apply(&x)?)?;
    let mut residual = f64::INFINITY;
    let mut step = 0.0;
    for k in 0..cfg.iters {
        let y = c.apply(&x)?;
        let g = c.apply_transpose(&owa_subgradient(w, &y)?)?;
        step = cfg.step.at(k);
        let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
        let next = project_simplex(&moved);
        let diff: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        residual = norm2(&diff);
        x = next;
        let value = owa_value(w, &c.apply(&x)?)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("projected subgradient objective"));
        }
        if value > best {
            best = value;
            best_x.clone_from(&x);
        }
    }
    Ok(SolveReport {
        solution: best_x,
        objective: best,
        iterations: cfg.iters,
        final_step: step,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::owa::fair_gini_weights;

    #[test]
    fn single_criterion_reaches_best_vertex() {
        let c = CriteriaMatrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let w = OwaWeights::new(vec![1.0]).unwrap();
        let r = solve_owa_projected_subgradient(&w, &c, &SubgradientConfig::for_criteria(1))
            .unwrap();
        assert!((r.objective - 1.0).abs() < 1e-12);
        assert!((r.solution[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_criteria_split_evenly() {
        let c = CriteriaMatrix::identity(2).unwrap();
        let w = fair_gini_weights(2).unwrap();
        let r = solve_owa_projected_subgradient(&w, &c, &SubgradientConfig::precise()).unwrap();
        assert!((r.solution[0] - 0.5).abs() < 1e-3);
        assert!((r.objective - 0.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_zero_iterations() {
        let c = CriteriaMatrix::identity(2).unwrap();
        let w = fair_gini_weights(2).unwrap();
        let cfg = SubgradientConfig {
            iters: 0,
            step: StepRule::Constant(0.1),
        };
        assert!(solve_owa_projected_subgradient(&w, &c, &cfg).is_err());
    }
}
