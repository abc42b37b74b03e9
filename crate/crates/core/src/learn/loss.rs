use crate::error::{check_len, Result};
use crate::owa::{owa_decision_subgradient, owa_of_decision, CriteriaMatrix, OwaWeights};

/// Squared Frobenius error and its gradient `2 (c_hat - c)`.
pub fn loss_two_stage(c_hat: &[f64], c_true: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(c_true.len(), c_hat.len())?;
    let diff: Vec<f64> = c_hat.iter().zip(c_true).map(|(a, b)| a - b).collect();
    let value = diff.iter().map(|d| d * d).sum();
    Ok((value, diff.into_iter().map(|d| 2.0 * d).collect()))
}

/// Decision quality `OWA_w(C x)` and its supergradient w.r.t. `x`.
pub fn loss_owa_dq(w: &OwaWeights, c_true: &CriteriaMatrix, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    Ok((
        owa_of_decision(w, c_true, x)?,
        owa_decision_subgradient(w, c_true, x)?,
    ))
}

/// `owa_star - OWA_w(C x)`.
pub fn regret(w: &OwaWeights, c_true: &CriteriaMatrix, x: &[f64], owa_star: f64) -> Result<f64> {
    Ok(owa_star - owa_of_decision(w, c_true, x)?)
}

/// Regret as a percentage of `|owa_star|`.
pub fn percent_regret(regret: f64, owa_star: f64) -> f64 {
    if owa_star == 0.0 {
        0.0
    } else {
        100.0 * regret / owa_star.abs()
    }
}
