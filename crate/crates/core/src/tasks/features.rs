use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::learn::{Dense, Layout, Predictor, PredictorSpec};

/// Fixed random two-layer rectifier network used to turn ground-truth
/// parameters into observable features, plus Gaussian noise.
#[derive(Debug, Clone)]
pub struct RandomFeatureMap {
    net: Predictor,
    noise: f64,
}

impl RandomFeatureMap {
    pub fn new(input: usize, output: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = 2 * output;
        let spec = PredictorSpec {
            input,
            hidden: vec![hidden],
            heads: 1,
            head_out: output,
            layout: Layout::Joint,
        };
        let gauss = Normal::new(0.0, 1.0).expect("unit normal");
        let mut layer = |i: usize, o: usize| {
            let mut d = Dense::zeros(i, o);
            let s = 1.0 / (i as f64).sqrt();
            for v in d.weight.iter_mut() {
                *v = s * gauss.sample(&mut rng);
            }
            d
        };
        let trunk = vec![layer(input, hidden)];
        let heads = vec![layer(hidden, output)];
        let net = Predictor {
            spec,
            trunk,
            heads,
            seed,
        };
        Self { net, noise }
    }

    /// Features for a centered copy of `params`.
    pub fn apply(&self, params: &[f64], center: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let centered: Vec<f64> = params.iter().map(|p| p - center).collect();
        let mut z = self.net.predict(&centered).expect("shape fixed at construction");
        if self.noise > 0.0 {
            let n = Normal::new(0.0, self.noise).expect("positive noise");
            for v in z.iter_mut() {
                *v += n.sample(rng);
            }
        }
        z
    }
}

pub(crate) fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    if hi > lo {
        Uniform::new(lo, hi).expect("valid range")
    } else {
        Uniform::new_inclusive(lo, lo).expect("degenerate range")
    }
}
