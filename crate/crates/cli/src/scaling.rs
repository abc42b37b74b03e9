//! Forward plus backward time per sample of the two portfolio layers as the
//! number of scenarios grows.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use owa_pto::diff::{MoreauLayer, QpLayer, VectorJacobianHook};
use owa_pto::owa::{fair_gini_weights, CriteriaMatrix};
use owa_pto::solvers::{permutation_count, MoreauPgdConfig};
use owa_pto::Error;

use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub ms: Vec<usize>,
    /// Assets per instance.
    pub n: usize,
    /// Instances timed per (route, m).
    pub samples: usize,
    pub qp_epsilon: f64,
    /// Passes over the instances; the fastest pass is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            ms: vec![2, 3, 4, 5, 6, 7],
            n: 10,
            samples: 20,
            qp_epsilon: 1.0,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub route: String,
    pub m: usize,
    /// Permutation constraints of the QP; 0 for the Moreau route.
    pub constraints: usize,
    /// Mean seconds per forward plus backward; NaN when the route refused.
    pub seconds_per_sample: f64,
    /// `ok` or the refusal message.
    pub status: String,
}

impl ScalingRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn instances(cfg: &ScalingConfig, m: usize) -> CliResult<Vec<(CriteriaMatrix, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((m as u64) << 32));
    (0..cfg.samples)
        .map(|_| {
            let base: Vec<f64> = (0..cfg.n).map(|_| rng.random_range(0.5..1.5)).collect();
            let c: Vec<f64> = (0..m * cfg.n)
                .map(|k| base[k % cfg.n] * rng.random_range(0.5..1.5))
                .collect();
            let g: Vec<f64> = (0..cfg.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Ok((CriteriaMatrix::from_row_slice(m, cfg.n, &c)?, g))
        })
        .collect()
}

/// Times both layers for every `m` in the config. The QP route reports the
/// capacity refusal for `m` above its limit instead of failing.
pub fn run_scaling(cfg: &ScalingConfig) -> CliResult<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &m in &cfg.ms {
        let w = fair_gini_weights(m)?;
        let data = instances(cfg, m)?;

        let moreau = MoreauPgdConfig::training(m);
        let mut best = f64::INFINITY;
        for _ in 0..cfg.repeats.max(1) {
            let start = Instant::now();
            for (c, g) in &data {
                let layer = MoreauLayer::forward(&w, c, &moreau)?;
                std::hint::black_box(layer.backward(g)?);
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        rows.push(ScalingRow {
            route: "owa_moreau".into(),
            m,
            constraints: 0,
            seconds_per_sample: best / data.len() as f64,
            status: "ok".into(),
        });

        let mut best = f64::INFINITY;
        let mut refused = None;
        let mut constraints = permutation_count(m);
        'passes: for _ in 0..cfg.repeats.max(1) {
            let start = Instant::now();
            for (c, g) in &data {
                match QpLayer::forward(&w, c, cfg.qp_epsilon) {
                    Ok(layer) => {
                        constraints = layer.solution.constraint_count();
                        std::hint::black_box(layer.backward(g)?);
                    }
                    Err(e @ Error::CapacityExceeded { .. }) => {
                        refused = Some(e.to_string());
                        break 'passes;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        rows.push(match refused {
            Some(msg) => ScalingRow {
                route: "owa_qp".into(),
                m,
                constraints: 0,
                seconds_per_sample: f64::NAN,
                status: msg,
            },
            None => ScalingRow {
                route: "owa_qp".into(),
                m,
                constraints,
                seconds_per_sample: best / data.len() as f64,
                status: "ok".into(),
            },
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log t` against `log m` over the successful rows of `route`.
pub fn log_log_slope(rows: &[ScalingRow], route: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.route == route && r.is_ok() && r.seconds_per_sample > 0.0)
        .map(|r| ((r.m as f64).ln(), r.seconds_per_sample.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refusal_is_reported_not_raised() {
        let cfg = ScalingConfig {
            ms: vec![2, 7],
            samples: 1,
            repeats: 1,
            ..Default::default()
        };
        let rows = run_scaling(&cfg).unwrap();
        let qp7 = rows.iter().find(|r| r.route == "owa_qp" && r.m == 7).unwrap();
        assert!(!qp7.is_ok());
        assert!(qp7.status.contains("5040"));
        let qp2 = rows.iter().find(|r| r.route == "owa_qp" && r.m == 2).unwrap();
        assert_eq!(qp2.constraints, 2);
    }

    #[test]
    fn slope_of_power_law() {
        let rows: Vec<ScalingRow> = [2usize, 4, 8]
            .iter()
            .map(|&m| ScalingRow {
                route: "x".into(),
                m,
                constraints: 0,
                seconds_per_sample: (m * m) as f64,
                status: "ok".into(),
            })
            .collect();
        assert!((log_log_slope(&rows, "x").unwrap() - 2.0).abs() < 1e-12);
    }
}
