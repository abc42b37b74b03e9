use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use owa_pto::learn::{loss_owa_dq, loss_two_stage, Predictor, PredictorSpec};
use owa_pto::owa::{fair_gini_weights, CriteriaMatrix};

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs())) / scale
}

/// Central differences of `g . predict(z)` over every parameter.
fn param_fd(model: &Predictor, z: &[f64], g: &[f64], h: f64) -> Vec<f64> {
    let base = model.params();
    let mut probe = model.clone();
    (0..base.len())
        .map(|k| {
            let mut f = |delta: f64| {
                let mut p = base.clone();
                p[k] += delta;
                probe.set_params(&p).unwrap();
                let out = probe.predict(z).unwrap();
                out.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
            };
            (f(h) - f(-h)) / (2.0 * h)
        })
        .collect()
}

fn check_backward(spec: PredictorSpec, seed: u64) {
    let model = Predictor::new(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = uniform(&mut rng, model.spec.feature_len(), -1.0, 1.0);
    let g = uniform(&mut rng, model.spec.output_len(), -1.0, 1.0);
    let (_, cache) = model.forward(&z).unwrap();
    let grad = model.backward(&cache, &g).unwrap();
    let fd = param_fd(&model, &z, &g, 1e-6);
    let err = max_rel(&grad, &fd);
    assert!(err < 1e-6, "{:?}: relative error {err:e}", model.spec.layout);
}

#[test]
fn joint_multi_head_backward_matches_differences() {
    for seed in 0..4 {
        check_backward(PredictorSpec::halving(6, 2, 3, 4), seed);
    }
}

#[test]
fn item_wise_backward_matches_differences() {
    for seed in 0..4 {
        check_backward(PredictorSpec::item_wise(3, 2, 5), seed);
    }
}

#[test]
fn item_wise_multi_head_backward_matches_differences() {
    for seed in 0..4 {
        check_backward(PredictorSpec::item_wise_heads(3, 2, 6, 3), seed);
    }
}

#[test]
fn item_wise_heads_score_items_independently() {
    let model = Predictor::new(PredictorSpec::item_wise_heads(2, 1, 3, 2), 9).unwrap();
    let z = [0.1, 0.2, 0.3, -0.4, 0.5, 0.6];
    let out = model.predict(&z).unwrap();
    // swapping two items swaps their scores in every head
    let swapped = [0.3, -0.4, 0.1, 0.2, 0.5, 0.6];
    let out2 = model.predict(&swapped).unwrap();
    for h in 0..2 {
        assert_eq!(out[h * 3], out2[h * 3 + 1]);
        assert_eq!(out[h * 3 + 1], out2[h * 3]);
        assert_eq!(out[h * 3 + 2], out2[h * 3 + 2]);
    }
}

#[test]
fn loss_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..20 {
        let (m, n) = (3, 5);
        let c_hat = uniform(&mut rng, m * n, -1.0, 1.0);
        let c_true = uniform(&mut rng, m * n, -1.0, 1.0);
        let (_, g) = loss_two_stage(&c_hat, &c_true).unwrap();
        let fd: Vec<f64> = (0..c_hat.len())
            .map(|k| {
                let mut up = c_hat.clone();
                up[k] += h;
                let mut dn = c_hat.clone();
                dn[k] -= h;
                (loss_two_stage(&up, &c_true).unwrap().0 - loss_two_stage(&dn, &c_true).unwrap().0) / (2.0 * h)
            })
            .collect();
        assert!(max_rel(&g, &fd) < 1e-4);

        let w = fair_gini_weights(m).unwrap();
        let c = CriteriaMatrix::from_row_slice(m, n, &c_true).unwrap();
        let x = uniform(&mut rng, n, 0.0, 1.0);
        let y = c.apply(&x).unwrap();
        let mut ys = y.clone();
        ys.sort_by(|a, b| a.total_cmp(b));
        if ys.windows(2).any(|p| p[1] - p[0] < 1e-3) {
            continue;
        }
        let (_, gx) = loss_owa_dq(&w, &c, &x).unwrap();
        let fd: Vec<f64> = (0..n)
            .map(|k| {
                let mut up = x.clone();
                up[k] += h;
                let mut dn = x.clone();
                dn[k] -= h;
                (loss_owa_dq(&w, &c, &up).unwrap().0 - loss_owa_dq(&w, &c, &dn).unwrap().0) / (2.0 * h)
            })
            .collect();
        assert!(max_rel(&gx, &fd) < 1e-4);
    }
}
