//! Oracle and property checks over the library, grouped into suites.
//!
//! Every check compares a library routine with a brute-force or independent
//! computation on random instances drawn from a fixed seed.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use owa_pto::diff::{
    backward_fixed_point, backward_qp_kkt, birkhoff_vertex_oracle, spo_plus_for_owa_rank,
    spo_plus_loss, spo_plus_rank_loss_and_grad, spo_plus_subgradient, RankSpoInstance,
};
use owa_pto::geometry::{
    moreau_owa_gradient, moreau_owa_value, project_permutahedron, project_simplex, Permutahedron,
    SmoothingParam, MEMBERSHIP_TOL,
};
use owa_pto::owa::{
    fair_gini_weights, owa_of_decision, owa_subgradient, owa_value, CriteriaMatrix, OwaWeights,
};
use owa_pto::solvers::{
    dcg_position_bias, owa_enumeration_oracle, permutation_count, solve_fair_ranking_fw,
    solve_owa_moreau_frankwolfe, solve_owa_moreau_pgd, solve_owa_projected_subgradient,
    solve_owa_qp_reformulation, solve_shortest_path, FairRankingConfig, GridGraph, GroupStructure,
    MoreauPgdConfig, RankingPolicy, StepRule, SubgradientConfig, QP_MAX_CRITERIA,
};
use owa_pto::Error;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Owa,
    Geometry,
    Solvers,
    Gradients,
    Rank,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Owa, Suite::Geometry, Suite::Solvers, Suite::Gradients, Suite::Rank];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Owa => "owa",
            Suite::Geometry => "geometry",
            Suite::Solvers => "solvers",
            Suite::Gradients => "gradients",
            Suite::Rank => "rank",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown suite `{s}`")))
    }
}

/// Smoothed OWA gradient as seen by the gradient checks. Tests substitute a
/// corrupted version to make sure the suite notices.
pub type MoreauGradientFn = fn(&OwaWeights, &[f64], SmoothingParam) -> owa_pto::Result<Vec<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Random instances per check; the expensive checks use a tenth, at least 5.
    pub cases: usize,
    pub seed: u64,
    pub moreau_gradient: MoreauGradientFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            cases: 200,
            seed: 0,
            moreau_gradient: moreau_owa_gradient,
        }
    }
}

impl VerifyOptions {
    fn heavy_cases(&self) -> usize {
        (self.cases / 10).max(5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn suite_passed(&self, suite: Suite) -> bool {
        self.checks.iter().filter(|c| c.suite == suite).all(|c| c.passed)
    }

    /// `suite,check,status,detail` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["suite", "check", "status", "detail"]).expect("in-memory write");
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "fail" };
            wtr.write_record([c.suite.name(), c.name, status, c.detail.as_str()])
                .expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory write")).expect("utf-8 output")
    }
}

type CheckResult = Result<String, String>;

fn lib<T>(r: owa_pto::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |s, v| s.max(v.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()))
}

/// Strictly decreasing weights summing to one.
pub fn random_fair_weights(rng: &mut ChaCha8Rng, m: usize) -> OwaWeights {
    loop {
        let mut w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        w.sort_by(|a, b| b.total_cmp(a));
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        // renormalization can leave the sum an ulp away from one
        let head: f64 = w[..m - 1].iter().sum();
        w[m - 1] = 1.0 - head;
        if let Ok(w) = OwaWeights::new_fair(w) {
            return w;
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Vector whose entries are pairwise at least `gap` apart.
fn distinct_vec(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    loop {
        let y = random_vec(rng, n, -2.0, 2.0);
        let sorted: Vec<f64> = y.iter().copied().sorted_by(|a, b| a.total_cmp(b)).collect();
        if sorted.windows(2).all(|p| p[1] - p[0] >= gap) {
            return y;
        }
    }
}

fn min_form(w: &OwaWeights, y: &[f64]) -> f64 {
    let w = w.as_slice();
    (0..y.len())
        .permutations(y.len())
        .map(|p| p.iter().enumerate().map(|(k, &i)| w[i] * y[k]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

// ---- owa ----

fn check_min_form(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let w = random_fair_weights(rng, m);
        let y = random_vec(rng, m, -5.0, 5.0);
        let err = (lib(owa_value(&w, &y))? - min_form(&w, &y)).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(format!("w {:?} y {y:?}: gap {err:.3e}", w.as_slice()));
        }
    }
    Ok(format!("{} cases, max gap {worst:.1e}", opts.cases))
}

fn check_impartiality(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=5);
        let w = random_fair_weights(rng, m);
        let y = random_vec(rng, m, -5.0, 5.0);
        let base = lib(owa_value(&w, &y))?;
        for p in (0..m).permutations(m) {
            let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
            let v = lib(owa_value(&w, &yp))?;
            if (v - base).abs() > 1e-12 {
                return Err(format!("y {y:?} permuted by {p:?}: {v} vs {base}"));
            }
        }
    }
    Ok(format!("{} cases", opts.cases))
}

fn check_monotonicity(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let w = random_fair_weights(rng, m);
        let y = random_vec(rng, m, -5.0, 5.0);
        let mut up = y.clone();
        up[rng.random_range(0..m)] += rng.random_range(1e-3..1.0);
        let (a, b) = (lib(owa_value(&w, &y))?, lib(owa_value(&w, &up))?);
        if !(b > a) {
            return Err(format!("raising an entry of {y:?} moved the value {a} -> {b}"));
        }
    }
    Ok(format!("{} cases", opts.cases))
}

fn check_equitability(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut done = 0;
    while done < opts.cases {
        let m = rng.random_range(2..=6);
        let w = random_fair_weights(rng, m);
        let y = random_vec(rng, m, -5.0, 5.0);
        let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
        if y[i] - y[j] < 1e-3 {
            continue;
        }
        let eps = rng.random_range(0.01..0.5) * (y[i] - y[j]);
        let mut t = y.clone();
        t[i] -= eps;
        t[j] += eps;
        let (a, b) = (lib(owa_value(&w, &y))?, lib(owa_value(&w, &t))?);
        if !(b > a) {
            return Err(format!("transfer {eps} from {i} to {j} in {y:?}: {a} -> {b}"));
        }
        done += 1;
    }
    Ok(format!("{} cases", opts.cases))
}

fn check_supergradient(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let w = random_fair_weights(rng, m);
        let y = random_vec(rng, m, -5.0, 5.0);
        let z = random_vec(rng, m, -5.0, 5.0);
        let g = lib(owa_subgradient(&w, &y))?;
        let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
        let bound = lib(owa_value(&w, &y))? + dot(&g, &d);
        if lib(owa_value(&w, &z))? > bound + 1e-12 {
            return Err(format!("linearization at {y:?} lies below the value at {z:?}"));
        }
    }
    Ok(format!("{} cases", opts.cases))
}

// ---- geometry ----

fn check_permutahedron_vi(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let base = random_vec(rng, m, -1.0, 1.0);
        let perm = lib(Permutahedron::new(&base))?;
        let v = random_vec(rng, m, -3.0, 3.0);
        let p = lib(project_permutahedron(&perm, &v))?.point;
        if !perm.contains(&p, MEMBERSHIP_TOL) {
            return Err(format!("projection {p:?} of {v:?} left the permutahedron of {base:?}"));
        }
        let r: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
        for q in (0..m).permutations(m) {
            let d: Vec<f64> = q.iter().zip(&p).map(|(&i, pi)| base[i] - pi).collect();
            let vi = dot(&r, &d);
            worst = worst.max(vi);
            if vi > 1e-8 {
                return Err(format!("vertex {q:?} violates the inequality by {vi:.3e}"));
            }
        }
    }
    Ok(format!("{} cases, max <v-p, q-p> {worst:.1e}", opts.cases))
}

fn check_simplex_vi(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..opts.cases {
        let n = rng.random_range(1..=8);
        let v = random_vec(rng, n, -3.0, 3.0);
        let p = project_simplex(&v);
        if p.iter().any(|x| *x < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(format!("projection {p:?} of {v:?} is not in the simplex"));
        }
        let r: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
        for k in 0..n {
            let vi = r[k] - dot(&r, &p);
            if vi > 1e-10 {
                return Err(format!("vertex {k} violates the inequality by {vi:.3e} for {v:?}"));
            }
        }
    }
    Ok(format!("{} cases", opts.cases))
}

fn check_moreau_gradient_membership(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let w = random_fair_weights(rng, m);
        let y = random_vec(rng, m, -2.0, 2.0);
        let beta = lib(SmoothingParam::new(rng.random_range(0.01..1.0)))?;
        let q = lib((opts.moreau_gradient)(&w, &y, beta))?;
        if !Permutahedron::from_weights(&w).contains(&q, MEMBERSHIP_TOL) {
            return Err(format!("gradient {q:?} at {y:?} is outside the weight permutahedron"));
        }
    }
    Ok(format!("{} cases", opts.cases))
}

// ---- solvers ----

fn check_cross_agreement(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let cases = opts.heavy_cases();
    let step = 0.05;
    // both first-order solvers converge slowly near kinks; these budgets keep
    // their error well below the agreement tolerance
    let subgradient = SubgradientConfig {
        iters: 200_000,
        step: StepRule::Diminishing(0.5),
    };
    let (mut spread, mut oracle) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(2..=6);
        let w = fair_gini_weights(m).map_err(|e| e.to_string())?;
        let c = lib(CriteriaMatrix::from_row_slice(m, n, &random_vec(rng, m * n, 0.0, 1.0)))?;
        let xs = [
            lib(solve_owa_projected_subgradient(&w, &c, &subgradient))?.solution,
            lib(solve_owa_moreau_frankwolfe(&w, &c, lib(SmoothingParam::new(1e-3))?, 100_000))?.solution,
            lib(solve_owa_qp_reformulation(&w, &c, 0.0))?.x().to_vec(),
        ];
        let vals = xs
            .iter()
            .map(|x| lib(owa_of_decision(&w, &c, x)))
            .collect::<Result<Vec<_>, _>>()?;
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        spread = spread.max(hi - lo);
        if hi - lo > 1e-3 {
            return Err(format!("objectives {vals:?} disagree (m {m}, n {n})"));
        }
        // a grid point within `step` per coordinate of the optimum loses at
        // most step * |C|_inf per criterion
        let grid = lib(owa_enumeration_oracle(&w, &c, step))?;
        let gap = (hi - grid) / (step * c.norm_inf());
        oracle = oracle.max(gap);
        if !(-1e-9..=2.0).contains(&gap) {
            return Err(format!("grid oracle {grid} vs solvers {hi}: {gap:.3} steps"));
        }
    }
    Ok(format!("{cases} cases, spread {spread:.1e}, oracle gap {oracle:.3} steps"))
}

/// Cheapest simple source-to-sink path by exhaustive search.
fn brute_force_path(graph: &GridGraph, cost: &[f64]) -> f64 {
    fn dfs(g: &GridGraph, cost: &[f64], u: usize, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if u == g.sink() {
            *best = best.min(acc);
            return;
        }
        for &v in g.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                dfs(g, cost, v, seen, acc + cost[v], best);
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; graph.node_count()];
    seen[graph.source()] = true;
    let mut best = f64::INFINITY;
    dfs(graph, cost, graph.source(), &mut seen, cost[graph.source()], &mut best);
    best
}

fn check_shortest_path(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let cases = opts.heavy_cases();
    for _ in 0..cases {
        let (r, c) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let graph = lib(GridGraph::new(r, c))?;
        let cost = random_vec(rng, r * c, 0.1, 2.0);
        let path = lib(solve_shortest_path(&graph, &cost))?;
        if !graph.is_path_indicator(&path.node_indicator)
            || path.node_indicator.iter().any(|v| *v != 0.0 && *v != 1.0)
        {
            return Err(format!("{r}x{c}: output is not a binary path"));
        }
        let best = brute_force_path(&graph, &cost);
        if (path.cost - best).abs() > 1e-9 || (dot(&path.node_indicator, &cost) - best).abs() > 1e-9 {
            return Err(format!("{r}x{c}: cost {} vs exhaustive {best}", path.cost));
        }
    }
    Ok(format!("{cases} cases"))
}

fn random_groups(rng: &mut ChaCha8Rng, n: usize, k: usize) -> GroupStructure {
    loop {
        let membership: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        if let Ok(g) = GroupStructure::new(membership) {
            if g.group_count() == k {
                return g;
            }
        }
    }
}

fn check_ranking_fw(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let cases = opts.heavy_cases();
    for _ in 0..cases {
        let n = rng.random_range(2..=8);
        let groups = random_groups(rng, n, 2.min(n));
        let b = lib(dcg_position_bias(n))?;
        let y = random_vec(rng, n, 0.0, 1.0);
        let lambda = [0.0, 0.25, 0.5, 0.75, 0.95, 1.0][rng.random_range(0..6)];
        let cfg = FairRankingConfig {
            lambda,
            weights: lib(fair_gini_weights(groups.group_count()))?,
            beta0: 1.0,
            iters: rng.random_range(1..=200),
        };
        let policy = lib(solve_fair_ranking_fw(&y, &groups, &b, &cfg))?.policy;
        if !policy.is_doubly_stochastic(1e-9) {
            return Err(format!("n {n}, lambda {lambda}, T {}: policy not doubly stochastic", cfg.iters));
        }
        if lambda == 0.0 {
            let order: Vec<usize> = (0..n).sorted_by(|&i, &j| y[j].total_cmp(&y[i])).collect();
            let sorted = lib(lib(RankingPolicy::from_order(&order))?.utility(&y, &b))?;
            let got = lib(policy.utility(&y, &b))?;
            if (sorted - got).abs() > 1e-3 {
                return Err(format!("lambda 0: utility {got} vs sorted {sorted}"));
            }
        }
    }
    Ok(format!("{cases} cases"))
}

fn check_qp_capacity(_: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    for m in 1..=QP_MAX_CRITERIA {
        let w = lib(fair_gini_weights(m))?;
        let c = lib(CriteriaMatrix::from_row_slice(m, 2, &random_vec(rng, 2 * m, 0.0, 1.0)))?;
        let sol = lib(solve_owa_qp_reformulation(&w, &c, 0.1))?;
        let expect: usize = (1..=m).product();
        if sol.constraint_count() != expect || permutation_count(m) != expect {
            return Err(format!("m {m}: {} constraints, expected {expect}", sol.constraint_count()));
        }
    }
    let m = QP_MAX_CRITERIA + 1;
    let w = lib(fair_gini_weights(m))?;
    let c = lib(CriteriaMatrix::from_row_slice(m, 2, &random_vec(rng, 2 * m, 0.0, 1.0)))?;
    match solve_owa_qp_reformulation(&w, &c, 0.1) {
        Err(Error::CapacityExceeded { .. }) => Ok(format!("m! constraints for m <= {QP_MAX_CRITERIA}; m = {m} refused")),
        other => Err(format!("m = {m} was not refused: {other:?}")),
    }
}

// ---- gradients ----

fn check_subgradient_fd(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let w = random_fair_weights(rng, m);
        let y = distinct_vec(rng, m, 1e-3);
        let g = lib(owa_subgradient(&w, &y))?;
        let fd = central_fd(&y, h, |v| lib(owa_value(&w, v)))?;
        let err = max_abs_diff(&g, &fd) / max_abs(&fd).max(1e-12);
        worst = worst.max(err);
        if err > 1e-5 {
            return Err(format!("y {y:?}: relative error {err:.3e}"));
        }
    }
    Ok(format!("{} cases, max rel error {worst:.1e}", opts.cases))
}

fn check_moreau_fd(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let m = rng.random_range(1..=6);
        let w = random_fair_weights(rng, m);
        let y = distinct_vec(rng, m, 1e-3);
        let beta = lib(SmoothingParam::new(rng.random_range(0.05..1.0)))?;
        let g = lib((opts.moreau_gradient)(&w, &y, beta))?;
        let fd = central_fd(&y, h, |v| lib(moreau_owa_value(&w, v, beta)))?;
        let err = max_abs_diff(&g, &fd) / max_abs(&fd).max(1e-12);
        worst = worst.max(err);
        if err > 1e-5 {
            return Err(format!("y {y:?}, beta {}: relative error {err:.3e}", beta.get()));
        }
    }
    Ok(format!("{} cases, max rel error {worst:.1e}", opts.cases))
}

fn central_fd(y: &[f64], h: f64, f: impl Fn(&[f64]) -> Result<f64, String>) -> Result<Vec<f64>, String> {
    (0..y.len())
        .map(|k| {
            let mut up = y.to_vec();
            up[k] += h;
            let mut dn = y.to_vec();
            dn[k] -= h;
            Ok((f(&up)? - f(&dn)?) / (2.0 * h))
        })
        .collect()
}

/// Central differences of `g . x*(C)` over the entries of `C`, re-solving each time.
fn resolve_fd(
    c: &[f64],
    g: &[f64],
    h: f64,
    solve: impl Fn(&[f64]) -> Result<Vec<f64>, String>,
) -> Result<Vec<f64>, String> {
    central_fd(c, h, |v| Ok(dot(&solve(v)?, g)))
}

struct ImplicitInstance {
    w: OwaWeights,
    c: Vec<f64>,
    m: usize,
    n: usize,
    g: Vec<f64>,
}

fn implicit_instance(rng: &mut ChaCha8Rng) -> Result<ImplicitInstance, String> {
    let m = rng.random_range(2..=4);
    let n = rng.random_range(2..=6);
    Ok(ImplicitInstance {
        w: lib(fair_gini_weights(m))?,
        c: random_vec(rng, m * n, 0.0, 1.0),
        m,
        n,
        g: random_vec(rng, n, -1.0, 1.0),
    })
}

fn check_fixed_point_fd(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let cases = opts.heavy_cases();
    let cfg = MoreauPgdConfig {
        max_iters: 200_000,
        tol: 1e-13,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let inst = implicit_instance(rng)?;
        let (m, n) = (inst.m, inst.n);
        let cm = lib(CriteriaMatrix::from_row_slice(m, n, &inst.c))?;
        let rep = lib(solve_owa_moreau_pgd(&inst.w, &cm, &cfg))?;
        let back = lib(backward_fixed_point(&inst.w, &cm, &rep.solution, &inst.g, cfg.beta, rep.final_step))?;
        let fd = resolve_fd(&inst.c, &inst.g, 1e-6, |v| {
            Ok(lib(solve_owa_moreau_pgd(&inst.w, &lib(CriteriaMatrix::from_row_slice(m, n, v))?, &cfg))?.solution)
        })?;
        let err = max_abs_diff(&back.grad_c, &fd) / max_abs(&fd).max(1e-6);
        worst = worst.max(err);
        if err > 1e-3 {
            return Err(format!("m {m}, n {n}: relative error {err:.3e}"));
        }
    }
    Ok(format!("{cases} cases, max rel error {worst:.1e}"))
}

fn check_kkt_fd(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let cases = opts.heavy_cases();
    let eps = 0.1;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let inst = implicit_instance(rng)?;
        let (m, n) = (inst.m, inst.n);
        let cm = lib(CriteriaMatrix::from_row_slice(m, n, &inst.c))?;
        let sol = lib(solve_owa_qp_reformulation(&inst.w, &cm, eps))?;
        let back = lib(backward_qp_kkt(&cm, &sol, &inst.g))?;
        let fd = resolve_fd(&inst.c, &inst.g, 1e-6, |v| {
            Ok(lib(solve_owa_qp_reformulation(&inst.w, &lib(CriteriaMatrix::from_row_slice(m, n, v))?, eps))?
                .x()
                .to_vec())
        })?;
        let err = max_abs_diff(&back.grad_c, &fd) / max_abs(&fd).max(1e-6);
        worst = worst.max(err);
        if err > 1e-3 {
            return Err(format!("m {m}, n {n}: relative error {err:.3e}"));
        }
    }
    Ok(format!("{cases} cases, max rel error {worst:.1e}"))
}

// ---- rank ----

fn simplex_argmax(g: &[f64]) -> owa_pto::Result<Vec<f64>> {
    let k = (0..g.len()).max_by(|&a, &b| g[a].total_cmp(&g[b]).then(b.cmp(&a))).unwrap_or(0);
    let mut v = vec![0.0; g.len()];
    v[k] = 1.0;
    Ok(v)
}

fn check_spo_zero_at_truth(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let cases = opts.heavy_cases();
    for _ in 0..cases {
        let n = rng.random_range(2..=6);
        let gamma = random_vec(rng, n, -1.0, 1.0);
        let sub = lib(spo_plus_subgradient(&gamma, &gamma, &simplex_argmax))?;
        let loss = lib(spo_plus_loss(&gamma, &gamma, &simplex_argmax))?;
        if max_abs(&sub) != 0.0 || loss.abs() > 1e-12 {
            return Err(format!("simplex: loss {loss}, subgradient {sub:?}"));
        }

        let graph = lib(GridGraph::new(3, 3))?;
        let neg_cost: Vec<f64> = random_vec(rng, 9, 0.1, 2.0).iter().map(|c| -c).collect();
        let path = |g: &[f64]| -> owa_pto::Result<Vec<f64>> {
            let cost: Vec<f64> = g.iter().map(|v| -v).collect();
            Ok(solve_shortest_path(&graph, &cost)?.node_indicator)
        };
        let sub = lib(spo_plus_subgradient(&neg_cost, &neg_cost, &path))?;
        let loss = lib(spo_plus_loss(&neg_cost, &neg_cost, &path))?;
        if max_abs(&sub) != 0.0 || loss.abs() > 1e-12 {
            return Err(format!("grid flow: loss {loss}, subgradient {sub:?}"));
        }

        let gamma = random_vec(rng, 9, -1.0, 1.0);
        let birkhoff = |g: &[f64]| birkhoff_vertex_oracle(3, g);
        let sub = lib(spo_plus_subgradient(&gamma, &gamma, &birkhoff))?;
        let loss = lib(spo_plus_loss(&gamma, &gamma, &birkhoff))?;
        if max_abs(&sub) != 0.0 || loss.abs() > 1e-12 {
            return Err(format!("birkhoff: loss {loss}, subgradient {sub:?}"));
        }

        let items = rng.random_range(2..=8);
        let groups = random_groups(rng, items, 2.min(items));
        let bias = lib(dcg_position_bias(items))?;
        let c = random_vec(rng, items, 0.0, 1.0);
        for lambda in [0.0, 0.5, 0.95] {
            let cfg = FairRankingConfig {
                lambda,
                weights: lib(fair_gini_weights(groups.group_count()))?,
                beta0: 1.0,
                iters: 50,
            };
            let inst = RankSpoInstance {
                groups: &groups,
                bias: &bias,
                cfg: &cfg,
            };
            let (loss, grad) = lib(spo_plus_rank_loss_and_grad(&c, &c, &inst))?;
            if max_abs(&grad) != 0.0 || loss.abs() > 1e-12 {
                return Err(format!("fair ranking, lambda {lambda}: loss {loss}, subgradient {grad:?}"));
            }
        }
    }
    Ok(format!("{cases} cases on simplex, grid flow, Birkhoff and fair ranking"))
}

fn check_spo_birkhoff_agreement(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let n = 3;
    let bias = lib(dcg_position_bias(n))?;
    let groups = lib(GroupStructure::new(vec![0, 0, 1]))?;
    let cfg = FairRankingConfig {
        lambda: 0.0,
        weights: lib(fair_gini_weights(2))?,
        beta0: 1.0,
        iters: 10,
    };
    let inst = RankSpoInstance {
        groups: &groups,
        bias: &bias,
        cfg: &cfg,
    };
    let lift = |c: &[f64]| -> Vec<f64> {
        c.iter().flat_map(|ci| bias.as_slice().iter().map(move |bj| ci * bj)).collect()
    };
    let birkhoff = |g: &[f64]| birkhoff_vertex_oracle(n, g);
    for _ in 0..opts.cases {
        let c = random_vec(rng, n, 0.0, 1.0);
        let c_hat = random_vec(rng, n, -1.0, 2.0);
        let got = lib(spo_plus_for_owa_rank(&c_hat, &c, &inst))?;
        let sub = lib(spo_plus_subgradient(&lift(&c_hat), &lift(&c), &birkhoff))?;
        // d/dc_hat of <c_hat b^T, D> is D b
        let expect: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|p| sub[i * n + p] * bias.as_slice()[p]).sum())
            .collect();
        if max_abs_diff(&got, &expect) > 1e-12 {
            return Err(format!("c_hat {c_hat:?}, c {c:?}: {got:?} vs enumeration {expect:?}"));
        }
    }
    Ok(format!("{} cases", opts.cases))
}

fn check_spo_nonnegative(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let birkhoff = |g: &[f64]| birkhoff_vertex_oracle(3, g);
    for _ in 0..opts.cases {
        let gamma = random_vec(rng, 9, -1.0, 1.0);
        let gamma_hat = random_vec(rng, 9, -1.0, 1.0);
        let loss = lib(spo_plus_loss(&gamma_hat, &gamma, &birkhoff))?;
        if loss < -1e-12 {
            return Err(format!("negative loss {loss}"));
        }
    }
    Ok(format!("{} cases", opts.cases))
}

type CheckFn = fn(&VerifyOptions, &mut ChaCha8Rng) -> CheckResult;

fn suite_checks(suite: Suite) -> Vec<(&'static str, CheckFn)> {
    match suite {
        Suite::Owa => vec![
            ("min_form", check_min_form),
            ("impartiality", check_impartiality),
            ("monotonicity", check_monotonicity),
            ("equitability", check_equitability),
            ("supergradient", check_supergradient),
        ],
        Suite::Geometry => vec![
            ("permutahedron_projection", check_permutahedron_vi),
            ("simplex_projection", check_simplex_vi),
            ("moreau_gradient_membership", check_moreau_gradient_membership),
        ],
        Suite::Solvers => vec![
            ("cross_agreement", check_cross_agreement),
            ("shortest_path", check_shortest_path),
            ("fair_ranking_fw", check_ranking_fw),
            ("qp_capacity", check_qp_capacity),
        ],
        Suite::Gradients => vec![
            ("owa_subgradient_fd", check_subgradient_fd),
            ("moreau_gradient_fd", check_moreau_fd),
            ("fixed_point_resolve", check_fixed_point_fd),
            ("kkt_resolve", check_kkt_fd),
        ],
        Suite::Rank => vec![
            ("spo_zero_at_truth", check_spo_zero_at_truth),
            ("spo_birkhoff_enumeration", check_spo_birkhoff_agreement),
            ("spo_nonnegative", check_spo_nonnegative),
        ],
    }
}

/// Runs the requested suites. Each check draws from its own stream so that
/// results do not depend on which other checks ran.
pub fn run_verify(suites: &[Suite], opts: &VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();
    for &suite in suites {
        for (ci, (name, f)) in suite_checks(suite).into_iter().enumerate() {
            let stream = (suite as u64) << 8 | ci as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(stream);
            let (passed, detail) = match f(opts, &mut rng) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            checks.push(Check {
                suite,
                name,
                passed,
                detail,
            });
        }
    }
    VerifyReport { checks }
}
