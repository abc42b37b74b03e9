//! Euclidean projections onto the probability simplex and onto permutahedra,
//! and the Moreau-smoothed OWA built on top of them.
//!
//! The smoothed OWA used here is the concave envelope
//! `f_beta(y) = max_v OWA_w(v) - |v - y|^2 / (2 beta)`. Its gradient is the
//! projection of `-y / beta` onto the permutahedron `C(w)`, and it upper
//! bounds `OWA_w` by at most `beta / 2 * |grad|^2`.

use crate::error::{check_len, Error, Result};
use crate::owa::OwaWeights;

/// Tolerance of the permutahedron membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Convex hull of all permutations of `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutahedron {
    /// Generator sorted in descending order.
    sorted_desc: Vec<f64>,
}

impl Permutahedron {
    pub fn new(base: &[f64]) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::InvalidArgument("empty permutahedron generator".into()));
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("permutahedron generator"));
        }
        let mut sorted_desc = base.to_vec();
        sorted_desc.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { sorted_desc })
    }

    pub fn from_weights(w: &OwaWeights) -> Self {
        Self::new(w.as_slice()).expect("validated weights")
    }

    pub fn dim(&self) -> usize {
        self.sorted_desc.len()
    }

    pub fn sorted_generator(&self) -> &[f64] {
        &self.sorted_desc
    }

    /// Majorization test: equal sums and every top-k partial sum bounded.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        let mut q = p.to_vec();
        q.sort_by(|a, b| b.total_cmp(a));
        let mut sp = 0.0;
        let mut sb = 0.0;
        for (a, b) in q.iter().zip(&self.sorted_desc) {
            sp += a;
            sb += b;
            if sp > sb + tol {
                return false;
            }
        }
        (sp - sb).abs() <= tol
    }
}

/// Moreau smoothing scale `beta > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "smoothing parameter must be positive and finite, got {beta}"
            )));
        }
        Ok(Self(beta))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Result of a simplex projection, with the support needed for its Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexProjection {
    pub point: Vec<f64>,
    /// `support[i]` is true when coordinate `i` is strictly positive.
    pub support: Vec<bool>,
}

impl SimplexProjection {
    /// `J g` for the (symmetric) Jacobian `diag(s) - s s^T / |s|`.
    pub fn jacobian_apply(&self, g: &[f64]) -> Vec<f64> {
        let count = self.support.iter().filter(|s| **s).count().max(1);
        let mean = self
            .support
            .iter()
            .zip(g)
            .filter(|(s, _)| **s)
            .map(|(_, v)| v)
            .sum::<f64>()
            / count as f64;
        self.support
            .iter()
            .zip(g)
            .map(|(s, v)| if *s { v - mean } else { 0.0 })
            .collect()
    }
}

/// Euclidean projection onto `{x : 1^T x = 1, x >= 0}` by sorting.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    project_simplex_with_support(v).point
}

pub fn project_simplex_with_support(v: &[f64]) -> SimplexProjection {
    let n = v.len();
    if n == 0 {
        return SimplexProjection {
            point: Vec::new(),
            support: Vec::new(),
        };
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    let point: Vec<f64> = v.iter().map(|vi| (vi - theta).max(0.0)).collect();
    let support = point.iter().map(|p| *p > 0.0).collect();
    SimplexProjection { point, support }
}

/// Projection onto a permutahedron, with the pooled-block structure of the
/// isotonic solve needed for its Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutahedronProjection {
    pub point: Vec<f64>,
    /// Descending sort order of the input (stable ties).
    pub order: Vec<usize>,
    /// Pooled blocks as half-open ranges into `order`.
    pub blocks: Vec<(usize, usize)>,
}

impl PermutahedronProjection {
    /// `J g` for the Jacobian w.r.t. the projected point: identity minus
    /// averaging within each pooled block. The map is symmetric, so this is
    /// also the vector-Jacobian product.
    pub fn jacobian_apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        for &(start, end) in &self.blocks {
            let idx = &self.order[start..end];
            let mean = idx.iter().map(|&i| g[i]).sum::<f64>() / idx.len() as f64;
            for &i in idx {
                out[i] -= mean;
            }
        }
        out
    }
}

/// Decreasing isotonic regression by pool-adjacent-violators.
///
/// Minimizes `|v - s|^2` subject to `v_1 >= v_2 >= ... >= v_m`. Returns the fit
/// and the pooled blocks.
pub fn isotonic_decreasing(s: &[f64]) -> (Vec<f64>, Vec<(usize, usize)>) {
    // (start, end, sum)
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(s.len());
    for (i, &si) in s.iter().enumerate() {
        blocks.push((i, i + 1, si));
        while blocks.len() > 1 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            let mean_last = last.2 / (last.1 - last.0) as f64;
            let mean_prev = prev.2 / (prev.1 - prev.0) as f64;
            if mean_prev >= mean_last {
                break;
            }
            blocks.pop();
            let merged = blocks.last_mut().expect("two blocks present");
            merged.1 = last.1;
            merged.2 += last.2;
        }
    }
    let mut fit = vec![0.0; s.len()];
    for &(start, end, sum) in &blocks {
        let mean = sum / (end - start) as f64;
        fit[start..end].iter_mut().for_each(|v| *v = mean);
    }
    (fit, blocks.into_iter().map(|(a, b, _)| (a, b)).collect())
}

/// Euclidean projection of `v` onto `C(base)` in `O(m log m)`.
pub fn project_permutahedron(p: &Permutahedron, v: &[f64]) -> Result<PermutahedronProjection> {
    check_len(p.dim(), v.len())?;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let s: Vec<f64> = order
        .iter()
        .zip(p.sorted_generator())
        .map(|(&i, w)| v[i] - w)
        .collect();
    let (fit, blocks) = isotonic_decreasing(&s);
    let mut point = vec![0.0; v.len()];
    for (k, &i) in order.iter().enumerate() {
        point[i] = v[i] - fit[k];
    }
    Ok(PermutahedronProjection {
        point,
        order,
        blocks,
    })
}

/// Gradient of the Moreau-smoothed OWA with its projection structure.
///
/// The Jacobian of the gradient w.r.t. `y` is `-(1 / beta) * J`, with `J`
/// given by [`PermutahedronProjection::jacobian_apply`].
pub fn moreau_owa_projection(
    w: &OwaWeights,
    y: &[f64],
    beta: SmoothingParam,
) -> Result<PermutahedronProjection> {
    check_len(w.len(), y.len())?;
    let scaled: Vec<f64> = y.iter().map(|v| -v / beta.get()).collect();
    project_permutahedron(&Permutahedron::from_weights(w), &scaled)
}

/// `proj_{C(w)}(-y / beta)`: gradient of the smoothed OWA at `y`.
pub fn moreau_owa_gradient(w: &OwaWeights, y: &[f64], beta: SmoothingParam) -> Result<Vec<f64>> {
    Ok(moreau_owa_projection(w, y, beta)?.point)
}

/// `max_v OWA_w(v) - |v - y|^2 / (2 beta)`, evaluated in closed form as
/// `q . y + beta / 2 |q|^2` with `q` the smoothed gradient.
pub fn moreau_owa_value(w: &OwaWeights, y: &[f64], beta: SmoothingParam) -> Result<f64> {
    let q = moreau_owa_gradient(w, y, beta)?;
    Ok(moreau_value_from_gradient(&q, y, beta))
}

pub(crate) fn moreau_value_from_gradient(q: &[f64], y: &[f64], beta: SmoothingParam) -> f64 {
    let dot: f64 = q.iter().zip(y).map(|(a, b)| a * b).sum();
    let sq: f64 = q.iter().map(|a| a * a).sum();
    dot + 0.5 * beta.get() * sq
}
