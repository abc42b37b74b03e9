use crate::error::{check_len, Error, Result};
use crate::solvers::{solve_shortest_path, GridGraph};

/// Blackbox differentiation of the shortest-path map `c -> x*(c)` (a
/// minimizer): `(x*(c + lambda g) - x*(c)) / lambda`, where `g` is the loss
/// gradient w.r.t. the path indicator. Gradient descent on `c` along this
/// vector moves the path away from nodes whose use increases the loss.
pub fn backward_blackbox_lp(
    graph: &GridGraph,
    c_hat: &[f64],
    g: &[f64],
    lambda_bb: f64,
) -> Result<Vec<f64>> {
    check_len(graph.node_count(), c_hat.len())?;
    check_len(graph.node_count(), g.len())?;
    if !(lambda_bb > 0.0) || !lambda_bb.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "interpolation strength must be positive, got {lambda_bb}"
        )));
    }
    if g.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; c_hat.len()]);
    }
    let base = solve_shortest_path(graph, c_hat)?;
    let shifted: Vec<f64> = c_hat.iter().zip(g).map(|(c, gi)| c + lambda_bb * gi).collect();
    let moved = solve_shortest_path(graph, &shifted)?;
    Ok(moved
        .node_indicator
        .iter()
        .zip(&base.node_indicator)
        .map(|(a, b)| (a - b) / lambda_bb)
        .collect())
}
