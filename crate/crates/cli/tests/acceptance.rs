//! End-to-end acceptance checks. All criteria run inside one test so that the
//! timing measurements are not disturbed by other tests running concurrently.
//! Each criterion prints one `PASS`/`FAIL` line on stdout, bypassing the test
//! harness capture.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use owa_pto::diff::{
    backward_fixed_point, backward_qp_kkt, spo_plus_for_owa_rank, spo_plus_loss,
    spo_plus_rank_loss_and_grad, spo_plus_subgradient, RankSpoInstance,
};
use owa_pto::geometry::{
    moreau_owa_gradient, moreau_owa_value, project_permutahedron, Permutahedron, SmoothingParam,
};
use owa_pto::owa::{fair_gini_weights, owa_subgradient, owa_value, CriteriaMatrix, OwaWeights};
use owa_pto::solvers::{
    dcg_position_bias, solve_owa_moreau_frankwolfe, solve_owa_moreau_pgd,
    solve_owa_projected_subgradient, solve_owa_qp_reformulation, solve_shortest_path,
    FairRankingConfig, GridGraph, GroupStructure, MoreauPgdConfig, StepRule, SubgradientConfig,
};
use owa_pto_cli::experiment::test_means;
use owa_pto_cli::{run_experiment, run_scaling, ResultRow, RunConfig, ScalingConfig, ScalingRow};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: owa_pto::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---- independent oracles ----

/// All permutations of `0..n` by Heap's algorithm.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
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

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random strictly decreasing weights on the simplex.
fn descending_weights(rng: &mut ChaCha8Rng, m: usize) -> OwaWeights {
    loop {
        let mut w = uniform(rng, m, 0.01, 1.0);
        w.sort_by(|a, b| b.total_cmp(a));
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let head: f64 = w[..m - 1].iter().sum();
        w[m - 1] = 1.0 - head;
        if let Ok(w) = OwaWeights::new_fair(w) {
            return w;
        }
    }
}

fn distinct_entries(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let y = uniform(rng, m, -2.0, 2.0);
        let mut s = y.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        if s.windows(2).all(|p| p[1] - p[0] >= 1e-3) {
            return y;
        }
    }
}

fn min_over_permutations(w: &[f64], y: &[f64]) -> f64 {
    permutations(y.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(k, &i)| w[i] * y[k]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Nonincreasing least-squares fit by the min-max formula
/// `v_i = min_{j <= i} max_{k >= i} mean(s_j..=s_k)`.
fn isotonic_nonincreasing(s: &[f64]) -> Vec<f64> {
    let n = s.len();
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| {
                    (i..n)
                        .map(|k| s[j..=k].iter().sum::<f64>() / (k - j + 1) as f64)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Euclidean projection onto the permutahedron of `w` (any order).
fn permutahedron_projection(w: &[f64], z: &[f64]) -> Vec<f64> {
    let m = z.len();
    let mut ws = w.to_vec();
    ws.sort_by(|a, b| b.total_cmp(a));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    let s: Vec<f64> = order.iter().zip(&ws).map(|(&i, wi)| z[i] - wi).collect();
    let v = isotonic_nonincreasing(&s);
    let mut p = z.to_vec();
    for (k, &i) in order.iter().enumerate() {
        p[i] -= v[k];
    }
    p
}

/// `min_{q in P(w)} q . y + beta/2 |q|^2`, attained at the projection of `-y/beta`.
fn smoothed_owa(w: &[f64], y: &[f64], beta: f64) -> f64 {
    let target: Vec<f64> = y.iter().map(|v| -v / beta).collect();
    let q = permutahedron_projection(w, &target);
    dot(&q, y) + 0.5 * beta * dot(&q, &q)
}

fn central_difference(y: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..y.len())
        .map(|k| {
            let mut up = y.to_vec();
            up[k] += h;
            let mut dn = y.to_vec();
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Best OWA over simplex points whose coordinates are multiples of `1/k`.
fn grid_optimum(w: &[f64], c: &[f64], m: usize, n: usize, k: usize) -> f64 {
    // every composition of k into n nonnegative parts, in lexicographic order
    let mut x = vec![0usize; n];
    x[n - 1] = k;
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut y: Vec<f64> = (0..m)
            .map(|i| (0..n).map(|j| c[i * n + j] * x[j] as f64 / k as f64).sum())
            .collect();
        y.sort_by(|a, b| a.total_cmp(b));
        best = best.max(dot(w, &y));
        // move one unit from the last part into the rightmost earlier slot
        // that can grow, then push everything after it to the end
        let Some(j) = (0..n - 1).rev().find(|&j| x[j + 1..].iter().sum::<usize>() > 0) else {
            return best;
        };
        x[j] += 1;
        let rest: usize = k - x[..=j].iter().sum::<usize>();
        x[j + 1..].iter_mut().for_each(|v| *v = 0);
        x[n - 1] = rest;
    }
}

fn owa_at(w: &OwaWeights, c: &[f64], m: usize, n: usize, x: &[f64]) -> f64 {
    let mut y: Vec<f64> = (0..m).map(|i| (0..n).map(|j| c[i * n + j] * x[j]).sum()).collect();
    y.sort_by(|a, b| a.total_cmp(b));
    dot(w.as_slice(), &y)
}

/// `argmax_P <P, gamma>` over `n x n` permutation matrices, row-major.
fn best_permutation_matrix(n: usize, gamma: &[f64]) -> Vec<f64> {
    let best = permutations(n)
        .into_iter()
        .max_by(|a, b| {
            let va: f64 = a.iter().enumerate().map(|(i, &p)| gamma[i * n + p]).sum();
            let vb: f64 = b.iter().enumerate().map(|(i, &p)| gamma[i * n + p]).sum();
            va.total_cmp(&vb)
        })
        .expect("n >= 1");
    let mut p = vec![0.0; n * n];
    for (i, &pos) in best.iter().enumerate() {
        p[i * n + pos] = 1.0;
    }
    p
}

fn resolve_difference(c: &[f64], g: &[f64], h: f64, solve: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    central_difference(c, h, |v| dot(&solve(v), g))
}

// ---- criteria ----

fn owa_min_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=6);
        let w = descending_weights(&mut rng, m);
        let y = uniform(&mut rng, m, -5.0, 5.0);
        let gap = (lib(owa_value(&w, &y))? - min_over_permutations(w.as_slice(), &y)).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-12, || format!("w {:?}, y {y:?}: gap {gap:e}", w.as_slice()))?;
    }
    Ok(format!("1000 cases, max gap {worst:.1e}"))
}

fn fair_owa_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..1000 {
        let m = rng.random_range(1..=5);
        let w = descending_weights(&mut rng, m);
        let y = uniform(&mut rng, m, -5.0, 5.0);
        let base = lib(owa_value(&w, &y))?;
        for p in permutations(m) {
            let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
            let v = lib(owa_value(&w, &yp))?;
            ensure((v - base).abs() <= 1e-12, || format!("impartiality: {y:?} by {p:?}: {v} vs {base}"))?;
        }
    }
    for _ in 0..1000 {
        let m = rng.random_range(1..=6);
        let w = descending_weights(&mut rng, m);
        let y = uniform(&mut rng, m, -5.0, 5.0);
        let mut up = y.clone();
        up[rng.random_range(0..m)] += rng.random_range(1e-3..1.0);
        let (a, b) = (lib(owa_value(&w, &y))?, lib(owa_value(&w, &up))?);
        ensure(b > a, || format!("monotonicity: {y:?} -> {up:?}: {a} -> {b}"))?;
    }
    let mut done = 0;
    while done < 1000 {
        let m = rng.random_range(2..=6);
        let w = descending_weights(&mut rng, m);
        let y = uniform(&mut rng, m, -5.0, 5.0);
        let (rich, poor) = (rng.random_range(0..m), rng.random_range(0..m));
        let spread = y[rich] - y[poor];
        if spread < 1e-3 {
            continue;
        }
        let t = rng.random_range(0.01..0.5) * spread;
        let mut moved = y.clone();
        moved[rich] -= t;
        moved[poor] += t;
        let (a, b) = (lib(owa_value(&w, &y))?, lib(owa_value(&w, &moved))?);
        ensure(b > a, || format!("equitability: {y:?} -> {moved:?}: {a} -> {b}"))?;
        done += 1;
    }
    Ok("impartiality, monotonicity, equitability: 1000 cases each".into())
}

fn gradient_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h = 1e-6;
    let (mut sub_worst, mut pair_worst, mut oracle_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = rng.random_range(1..=6);
        let w = descending_weights(&mut rng, m);
        let y = distinct_entries(&mut rng, m);

        let g = lib(owa_subgradient(&w, &y))?;
        let fd = central_difference(&y, h, |v| {
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.total_cmp(b));
            dot(w.as_slice(), &s)
        });
        let err = max_abs_diff(&g, &fd) / max_abs(&fd).max(1e-12);
        sub_worst = sub_worst.max(err);
        ensure(err <= 1e-5, || format!("subgradient at {y:?}: relative error {err:e}"))?;

        let beta_v = rng.random_range(0.05..1.0);
        let beta = lib(SmoothingParam::new(beta_v))?;
        let q = lib(moreau_owa_gradient(&w, &y, beta))?;
        let fd_pair = central_difference(&y, h, |v| moreau_owa_value(&w, v, beta).expect("valid input"));
        let err = max_abs_diff(&q, &fd_pair) / max_abs(&fd_pair).max(1e-12);
        pair_worst = pair_worst.max(err);
        ensure(err <= 1e-5, || format!("smoothed pair at {y:?}, beta {beta_v}: relative error {err:e}"))?;

        let fd_oracle = central_difference(&y, h, |v| smoothed_owa(w.as_slice(), v, beta_v));
        let err = max_abs_diff(&q, &fd_oracle) / max_abs(&fd_oracle).max(1e-12);
        oracle_worst = oracle_worst.max(err);
        ensure(err <= 1e-5, || format!("smoothed gradient vs oracle at {y:?}: relative error {err:e}"))?;
    }
    Ok(format!(
        "200 points; max rel error: subgradient {sub_worst:.1e}, value/gradient pair {pair_worst:.1e}, vs independent value {oracle_worst:.1e}"
    ))
}

fn permutahedron_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = f64::NEG_INFINITY;
    let mut oracle_gap = 0.0f64;
    for i in 0..200 {
        let m = 1 + i % 6;
        let base = uniform(&mut rng, m, -1.0, 1.0);
        let poly = lib(Permutahedron::new(&base))?;
        let v = uniform(&mut rng, m, -3.0, 3.0);
        let p = lib(project_permutahedron(&poly, &v))?.point;
        let r: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
        for perm in permutations(m) {
            let d: Vec<f64> = perm.iter().zip(&p).map(|(&k, pk)| base[k] - pk).collect();
            let vi = dot(&r, &d);
            worst = worst.max(vi);
            ensure(vi <= 1e-8, || format!("m {m}: vertex {perm:?} violates by {vi:e}"))?;
        }
        oracle_gap = oracle_gap.max(max_abs_diff(&p, &permutahedron_projection(&base, &v)));
    }
    ensure(oracle_gap <= 1e-9, || format!("projection differs from min-max oracle by {oracle_gap:e}"))?;
    Ok(format!("200 points, m = 1..6, max <v-p, q-p> {worst:.1e}, oracle gap {oracle_gap:.1e}"))
}

fn solver_cross_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let k = 20;
    let step = 1.0 / k as f64;
    let sub_cfg = SubgradientConfig {
        iters: 200_000,
        step: StepRule::Diminishing(0.5),
    };
    let beta = lib(SmoothingParam::new(1e-3))?;
    let (mut spread_worst, mut steps_worst) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..50 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(2..=6);
        let w = lib(fair_gini_weights(m))?;
        let c = uniform(&mut rng, m * n, 0.0, 1.0);
        let cm = lib(CriteriaMatrix::from_row_slice(m, n, &c))?;
        let xs = [
            lib(solve_owa_projected_subgradient(&w, &cm, &sub_cfg))?.solution,
            lib(solve_owa_moreau_frankwolfe(&w, &cm, beta, 100_000))?.solution,
            lib(solve_owa_qp_reformulation(&w, &cm, 0.0))?.x().to_vec(),
        ];
        for x in &xs {
            let sum: f64 = x.iter().sum();
            ensure(x.iter().all(|v| *v >= -1e-9) && (sum - 1.0).abs() <= 1e-8, || {
                format!("m {m}, n {n}: {x:?} is not in the simplex")
            })?;
        }
        let vals: Vec<f64> = xs.iter().map(|x| owa_at(&w, &c, m, n, x)).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        spread_worst = spread_worst.max(hi - lo);
        ensure(hi - lo <= 1e-3, || format!("m {m}, n {n}: objectives {vals:?}"))?;
        let grid = grid_optimum(w.as_slice(), &c, m, n, k);
        let c_inf = c.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let steps = (hi - grid) / (step * c_inf);
        steps_worst = steps_worst.max(steps);
        ensure((-1e-9..=2.0).contains(&steps), || {
            format!("m {m}, n {n}: solvers {hi} vs grid {grid} ({steps:.3} steps)")
        })?;
    }
    Ok(format!("50 instances, max spread {spread_worst:.1e}, max grid gap {steps_worst:.3} steps"))
}

fn implicit_differentiation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let pgd = MoreauPgdConfig {
        max_iters: 200_000,
        tol: 1e-13,
        ..Default::default()
    };
    let eps = 0.1;
    let (mut fp_worst, mut kkt_worst) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(2..=6);
        let w = lib(fair_gini_weights(m))?;
        let c = uniform(&mut rng, m * n, 0.0, 1.0);
        let g = uniform(&mut rng, n, -1.0, 1.0);
        let cm = lib(CriteriaMatrix::from_row_slice(m, n, &c))?;

        let rep = lib(solve_owa_moreau_pgd(&w, &cm, &pgd))?;
        let back = lib(backward_fixed_point(&w, &cm, &rep.solution, &g, pgd.beta, rep.final_step))?;
        let fd = resolve_difference(&c, &g, 1e-6, &|v| {
            let cv = CriteriaMatrix::from_row_slice(m, n, v).expect("same shape");
            solve_owa_moreau_pgd(&w, &cv, &pgd).expect("solvable").solution
        });
        let err = max_abs_diff(&back.grad_c, &fd) / max_abs(&fd).max(1e-6);
        fp_worst = fp_worst.max(err);
        ensure(err <= 1e-3, || format!("fixed point, m {m}, n {n}: relative error {err:e}"))?;

        let sol = lib(solve_owa_qp_reformulation(&w, &cm, eps))?;
        let back = lib(backward_qp_kkt(&cm, &sol, &g))?;
        let fd = resolve_difference(&c, &g, 1e-6, &|v| {
            let cv = CriteriaMatrix::from_row_slice(m, n, v).expect("same shape");
            solve_owa_qp_reformulation(&w, &cv, eps).expect("solvable").x().to_vec()
        });
        let err = max_abs_diff(&back.grad_c, &fd) / max_abs(&fd).max(1e-6);
        kkt_worst = kkt_worst.max(err);
        ensure(err <= 1e-3, || format!("KKT, m {m}, n {n}: relative error {err:e}"))?;
    }
    Ok(format!("20 instances each; max rel error fixed point {fp_worst:.1e}, KKT {kkt_worst:.1e}"))
}

fn spo_plus() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let zero = |what: &str, loss: f64, grad: &[f64]| {
        ensure(loss.abs() <= 1e-12 && max_abs(grad) == 0.0, || {
            format!("{what}: loss {loss}, subgradient {grad:?} at the truth")
        })
    };
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let gamma = uniform(&mut rng, n, -1.0, 1.0);
        let vertex = |g: &[f64]| -> owa_pto::Result<Vec<f64>> {
            let k = (0..g.len()).max_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap_or(0);
            let mut v = vec![0.0; g.len()];
            v[k] = 1.0;
            Ok(v)
        };
        zero(
            "simplex",
            lib(spo_plus_loss(&gamma, &gamma, &vertex))?,
            &lib(spo_plus_subgradient(&gamma, &gamma, &vertex))?,
        )?;

        let graph = lib(GridGraph::new(3, 4))?;
        let gain: Vec<f64> = uniform(&mut rng, 12, 0.1, 2.0).iter().map(|v| -v).collect();
        let path = |g: &[f64]| -> owa_pto::Result<Vec<f64>> {
            let cost: Vec<f64> = g.iter().map(|v| -v).collect();
            Ok(solve_shortest_path(&graph, &cost)?.node_indicator)
        };
        zero(
            "path flow",
            lib(spo_plus_loss(&gain, &gain, &path))?,
            &lib(spo_plus_subgradient(&gain, &gain, &path))?,
        )?;

        let gamma = uniform(&mut rng, 16, -1.0, 1.0);
        let birkhoff = |g: &[f64]| -> owa_pto::Result<Vec<f64>> { Ok(best_permutation_matrix(4, g)) };
        zero(
            "permutation matrices",
            lib(spo_plus_loss(&gamma, &gamma, &birkhoff))?,
            &lib(spo_plus_subgradient(&gamma, &gamma, &birkhoff))?,
        )?;

        let items = rng.random_range(2..=8);
        let membership: Vec<usize> = (0..items).map(|i| i % 2).collect();
        let groups = lib(GroupStructure::new(membership))?;
        let bias = lib(dcg_position_bias(items))?;
        let rel = uniform(&mut rng, items, 0.0, 1.0);
        for lambda in [0.0, 0.25, 0.5, 0.75, 0.95] {
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
            let (loss, grad) = lib(spo_plus_rank_loss_and_grad(&rel, &rel, &inst))?;
            zero(&format!("fair ranking, lambda {lambda}"), loss, &grad)?;
        }
    }

    let n = 3;
    let bias = lib(dcg_position_bias(n))?;
    let groups = lib(GroupStructure::new(vec![0, 1, 0]))?;
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
    let b = bias.as_slice();
    let lift = |c: &[f64]| -> Vec<f64> { (0..n * n).map(|k| c[k / n] * b[k % n]).collect() };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let c = uniform(&mut rng, n, 0.0, 1.0);
        let c_hat = uniform(&mut rng, n, -1.0, 2.0);
        let got = lib(spo_plus_for_owa_rank(&c_hat, &c, &inst))?;
        let shifted: Vec<f64> = c_hat.iter().zip(&c).map(|(h, t)| 2.0 * h - t).collect();
        let p_shift = best_permutation_matrix(n, &lift(&shifted));
        let p_true = best_permutation_matrix(n, &lift(&c));
        let expect: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| (p_shift[i * n + k] - p_true[i * n + k]) * b[k]).sum())
            .collect();
        let err = max_abs_diff(&got, &expect);
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("c_hat {c_hat:?}, c {c:?}: {got:?} vs enumeration {expect:?}"))?;
    }
    Ok(format!(
        "zero at truth on simplex, path flow, permutation matrices and fair ranking; n = 3 enumeration over 200 cases, max diff {worst:.1e}"
    ))
}

fn workspace_config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).expect("shipped config loads")
}

fn run_rows(cfg: &RunConfig) -> Result<Vec<ResultRow>, String> {
    let summary = run_experiment(cfg).map_err(|e| e.to_string())?;
    Ok(summary.rows().cloned().collect())
}

fn mean_of(means: &[(String, f64)], method: &str) -> Result<f64, String> {
    means
        .iter()
        .find(|m| m.0 == method)
        .map(|m| m.1)
        .ok_or_else(|| format!("no rows for {method}"))
}

fn portfolio_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = workspace_config("portfolio.toml");
    cfg.methods = vec!["two_stage".into(), "uws".into(), "owa_moreau".into()];
    cfg.seeds = vec![0, 1, 2];
    cfg.out = dir.path().to_path_buf();
    let means = test_means(&run_rows(&cfg)?, "regret_pct");
    let two = mean_of(&means, "two_stage")?;
    let uws = mean_of(&means, "uws")?;
    let moreau = mean_of(&means, "owa_moreau")?;
    let detail = format!("regret % two_stage {two:.3}, uws {uws:.3}, owa_moreau {moreau:.3}");
    ensure(moreau < uws && uws < two, || format!("ordering violated: {detail}"))?;
    ensure(moreau <= 0.9 * two, || format!("owa_moreau less than 10% below two_stage: {detail}"))?;
    Ok(format!("{detail}; relative gain {:.1}%", 100.0 * (1.0 - moreau / two)))
}

fn grid_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = workspace_config("grid.toml");
    cfg.seeds = vec![0, 1, 2];
    cfg.out = dir.path().to_path_buf();
    ensure(cfg.grid.rows == 6 && cfg.grid.cols == 6 && cfg.grid.train == 50, || {
        "shipped grid config is not the 6x6, 50-sample setup".into()
    })?;
    let rows = run_rows(&cfg)?;
    let regret = test_means(&rows, "regret_pct");
    let worst = test_means(&rows, "worst_species_regret_pct");
    let (r_two, r_sur) = (mean_of(&regret, "two_stage")?, mean_of(&regret, "surrogate_lp")?);
    let (w_two, w_sur) = (mean_of(&worst, "two_stage")?, mean_of(&worst, "surrogate_lp")?);
    let detail = format!(
        "regret % two_stage {r_two:.3}, surrogate_lp {r_sur:.3}; worst species two_stage {w_two:.3}, surrogate_lp {w_sur:.3}"
    );
    ensure(r_sur < r_two && w_sur <= w_two, || format!("ordering violated: {detail}"))?;
    Ok(detail)
}

fn ranking_tradeoff() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = workspace_config("rank.toml");
    cfg.seeds = vec![0, 1, 2];
    cfg.out = dir.path().to_path_buf();
    ensure(
        cfg.rank.items == 20 && cfg.rank.groups == 2 && cfg.rank.lambdas == [0.0, 0.25, 0.5, 0.75, 0.95],
        || "shipped rank config is not the 20-item, two-group setup".into(),
    )?;
    let rows = run_rows(&cfg)?;
    let violation = test_means(&rows, "violation");
    let utility = test_means(&rows, "utility");
    let labels: Vec<String> = cfg.rank.lambdas.iter().map(|l| format!("spo_rank@{l}")).collect();
    let v = labels.iter().map(|l| mean_of(&violation, l)).collect::<Result<Vec<_>, _>>()?;
    let u = labels.iter().map(|l| mean_of(&utility, l)).collect::<Result<Vec<_>, _>>()?;
    let detail = format!("violation {v:.4?}, utility {u:.4?}");
    ensure(v.windows(2).all(|p| p[1] <= p[0]), || format!("violation increases: {detail}"))?;
    ensure(u.windows(2).all(|p| p[1] <= p[0]), || format!("utility increases: {detail}"))?;
    ensure(v[4] < 0.25 * v[0], || format!("violation at 0.95 not below a quarter of lambda 0: {detail}"))?;
    Ok(detail)
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (mx, my) = (
        points.iter().map(|p| p.0.ln()).sum::<f64>() / k,
        points.iter().map(|p| p.1.ln()).sum::<f64>() / k,
    );
    let sxy: f64 = points.iter().map(|p| (p.0.ln() - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0.ln() - mx).powi(2)).sum();
    sxy / sxx
}

fn scaling() -> Outcome {
    let rows = run_scaling(&ScalingConfig::default()).map_err(|e| e.to_string())?;
    let find = |route: &str, m: usize| -> Result<&ScalingRow, String> {
        rows.iter()
            .find(|r| r.route == route && r.m == m)
            .ok_or_else(|| format!("no {route} row for m = {m}"))
    };
    let mut t_m = Vec::new();
    let mut t_q = Vec::new();
    for m in 2..=6usize {
        let q = find("owa_qp", m)?;
        let fact: usize = (1..=m).product();
        ensure(q.is_ok() && q.constraints == fact, || {
            format!("m {m}: {} constraints, status {}", q.constraints, q.status)
        })?;
        t_q.push((m as f64, q.seconds_per_sample));
        t_m.push((m as f64, find("owa_moreau", m)?.seconds_per_sample));
    }
    let q7 = find("owa_qp", 7)?;
    ensure(!q7.is_ok() && q7.seconds_per_sample.is_nan(), || "m = 7 was not refused".into())?;
    let (sm, sq) = (slope(&t_m), slope(&t_q));
    let t = |v: &[(f64, f64)], m: usize| v[m - 2].1;
    let detail = format!(
        "log-log slope moreau {sm:.2}, qp {sq:.2}; t_M(6)/t_M(3) {:.2}; t(5)/t(3) qp {:.2} vs moreau {:.2}",
        t(&t_m, 6) / t(&t_m, 3),
        t(&t_q, 5) / t(&t_q, 3),
        t(&t_m, 5) / t(&t_m, 3)
    );
    ensure(sm < 2.0, || format!("moreau time not sub-quadratic: {detail}"))?;
    ensure(sq > 1.0, || format!("qp time not super-linear: {detail}"))?;
    ensure(t(&t_m, 6) / t(&t_m, 3) < 4.0, || format!("moreau ratio: {detail}"))?;
    ensure(t_q.windows(2).all(|p| p[1].1 > p[0].1), || format!("qp time not increasing: {detail}"))?;
    ensure(t(&t_q, 5) / t(&t_q, 3) > t(&t_m, 5) / t(&t_m, 3), || format!("growth ratio: {detail}"))?;
    Ok(format!("{detail}; m = 7 refused"))
}

/// Summary file with the wall-time column cut from every data row.
fn untimed_summary(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| match l.starts_with('#') {
            true => l.to_string(),
            false => l.rsplit_once(',').map_or(l, |(head, _)| head).to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = workspace_config("portfolio.toml");
    cfg.methods = vec!["two_stage".into(), "uws".into(), "owa_moreau".into()];
    cfg.seeds = vec![0];
    cfg.out = dir.path().to_path_buf();
    let path = dir.path().join("summary.csv");
    run_experiment(&cfg).map_err(|e| e.to_string())?;
    let first = untimed_summary(&path)?;
    run_experiment(&cfg).map_err(|e| e.to_string())?;
    let second = untimed_summary(&path)?;
    ensure(first.lines().next().is_some_and(|l| l.starts_with("# owa-pto")), || {
        "summary lacks the version preamble".into()
    })?;
    let rows = first.lines().filter(|l| !l.starts_with('#')).count() - 1;
    ensure(first == second, || {
        let diff = first
            .lines()
            .zip(second.lines())
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{a} | {b}"))
            .unwrap_or_default();
        format!("runs differ: {diff}")
    })?;
    Ok(format!("{rows} rows identical across two runs"))
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

const fn criterion(id: usize, name: &'static str, secs: u64, check: fn() -> Outcome) -> Criterion {
    Criterion {
        id,
        name,
        budget: Duration::from_secs(secs),
        check,
    }
}

const CRITERIA: [Criterion; 12] = [
    criterion(1, "owa min-form", 5, owa_min_form),
    criterion(2, "fair owa axioms", 10, fair_owa_axioms),
    criterion(3, "gradient finite differences", 30, gradient_finite_differences),
    criterion(4, "permutahedron projection", 30, permutahedron_optimality),
    criterion(5, "solver cross-agreement", 300, solver_cross_agreement),
    criterion(6, "implicit differentiation", 300, implicit_differentiation),
    criterion(7, "spo+", 60, spo_plus),
    criterion(8, "portfolio ordering", 1200, portfolio_ordering),
    criterion(9, "grid ordering", 1200, grid_ordering),
    criterion(10, "ranking tradeoff", 900, ranking_tradeoff),
    criterion(11, "scaling", 600, scaling),
    criterion(12, "determinism", 1200, determinism),
];

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for c in &CRITERIA {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > c.budget => Err(format!("{d}; took {:.1}s over the {}s budget", took.as_secs_f64(), c.budget.as_secs())),
            r => r,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let line = format!(
            "criterion {:>2} {:<28} {status} {:>7.1}s  {detail}\n",
            c.id,
            c.name,
            took.as_secs_f64()
        );
        out.write_all(line.as_bytes()).expect("stdout");
        out.flush().expect("stdout");
        if result.is_err() {
            failed.push(c.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
