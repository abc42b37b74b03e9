use crate::error::{check_len, Error, Result};
use crate::owa::{owa_value, CriteriaMatrix, OwaWeights};

/// Largest number of grid points the oracle visits.
const ORACLE_MAX_POINTS: usize = 5_000_000;

/// Number of points of the simplex grid with `k` steps in dimension `n`.
fn grid_points(n: usize, k: usize) -> usize {
    // C(k + n - 1, n - 1), saturating
    let mut acc: usize = 1;
    for i in 1..n {
        acc = acc.saturating_mul(k + i) / i;
    }
    acc
}

/// Brute-force maximum of `OWA_w(C x)` over the simplex points whose entries
/// are multiples of `grid_step` (`1 / grid_step` is rounded to an integer).
pub fn owa_enumeration_oracle(w: &OwaWeights, c: &CriteriaMatrix, grid_step: f64) -> Result<f64> {
    check_len(w.len(), c.m())?;
    let n = c.n();
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {grid_step} outside (0, 1]")));
    }
    let k = (1.0 / grid_step).round() as usize;
    let points = grid_points(n, k);
    if points > ORACLE_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "grid of {points} points exceeds the oracle limit {ORACLE_MAX_POINTS}"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    let mut counts = vec![0usize; n];
    let mut x = vec![0.0; n];
    visit(0, k, &mut counts, &mut |cnt| {
        for (xi, ci) in x.iter_mut().zip(cnt) {
            *xi = *ci as f64 / k as f64;
        }
        let v = owa_value(w, &c.apply(&x)?)?;
        if v > best {
            best = v;
        }
        Ok(())
    })?;
    Ok(best)
}

fn visit(
    i: usize,
    left: usize,
    counts: &mut [usize],
    f: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if i + 1 == counts.len() {
        counts[i] = left;
        return f(counts);
    }
    for v in 0..=left {
        counts[i] = v;
        visit(i + 1, left - v, counts, f)?;
    }
    Ok(())
}
