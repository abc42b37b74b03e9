use crate::error::{check_len, Error, Result};
use crate::learn::percent_regret;

/// Whether the task objective is maximized or minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretRow {
    pub sample: usize,
    pub achieved: f64,
    pub optimum: f64,
    /// Nonnegative when the reference is optimal.
    pub regret: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretTable {
    pub rows: Vec<RegretRow>,
}

impl RegretTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mean_regret(&self) -> f64 {
        self.mean(|r| r.regret)
    }

    pub fn mean_percent(&self) -> f64 {
        self.mean(|r| r.percent)
    }

    pub fn max_percent(&self) -> f64 {
        self.rows.iter().map(|r| r.percent).fold(f64::NEG_INFINITY, f64::max)
    }

    fn mean(&self, f: impl Fn(&RegretRow) -> f64) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }
}

/// Per-sample and aggregate regret of achieved objective values against
/// reference optima.
pub fn eval_regret_suite(achieved: &[f64], optimum: &[f64], sense: Sense) -> Result<RegretTable> {
    check_len(optimum.len(), achieved.len())?;
    let mut rows = Vec::with_capacity(achieved.len());
    for (sample, (&a, &o)) in achieved.iter().zip(optimum).enumerate() {
        if !a.is_finite() || !o.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        let regret = match sense {
            Sense::Maximize => o - a,
            Sense::Minimize => a - o,
        };
        rows.push(RegretRow {
            sample,
            achieved: a,
            optimum: o,
            regret,
            percent: percent_regret(regret, o),
        });
    }
    Ok(RegretTable { rows })
}
