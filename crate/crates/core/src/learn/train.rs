use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::loss::loss_two_stage;
use super::model::Predictor;
use super::optim::Adam;

/// Training routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Regression on the parameters; the solver is only used at test time.
    TwoStage,
    /// End-to-end through the unweighted-sum linear program.
    Uws,
    /// End-to-end through the smoothed permutation reformulation.
    OwaQp,
    /// End-to-end through the Moreau-smoothed solver.
    OwaMoreau,
    /// Single cost vector through a linear solver, trained on the OWA loss.
    SurrogateLp,
    /// SPO+ through the fair ranking solver.
    SpoRank,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::TwoStage,
        Method::Uws,
        Method::OwaQp,
        Method::OwaMoreau,
        Method::SurrogateLp,
        Method::SpoRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TwoStage => "two_stage",
            Method::Uws => "uws",
            Method::OwaQp => "owa_qp",
            Method::OwaMoreau => "owa_moreau",
            Method::SurrogateLp => "surrogate_lp",
            Method::SpoRank => "spo_rank",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the regression term in `(1 - a) L_task + a L_mse`.
    pub mse_weight: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mse_weight) {
            return Err(Error::InvalidArgument(format!(
                "mse weight {} outside [0, 1]",
                self.mse_weight
            )));
        }
        Ok(())
    }
}

/// One feature vector with its ground-truth parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    /// Row-major ground truth (`C` or `c`).
    pub target: Vec<f64>,
}

/// Task loss of one prediction, with its gradient w.r.t. the prediction.
/// Lower is better.
pub trait Objective {
    fn loss(&self, pred: &[f64], sample: &Sample) -> Result<(f64, Vec<f64>)>;
}

/// Plain regression objective.
pub struct MseObjective;

impl Objective for MseObjective {
    fn loss(&self, pred: &[f64], sample: &Sample) -> Result<(f64, Vec<f64>)> {
        loss_two_stage(pred, &sample.target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Mini-batch Adam on `(1 - a) objective + a mse`, averaged over each batch.
/// Samples are reshuffled each epoch from `cfg.seed`. `validate` is called
/// after every epoch and its value recorded.
pub fn train(
    model: &mut Predictor,
    train_set: &[Sample],
    objective: &dyn Objective,
    cfg: &TrainConfig,
    validate: &mut dyn FnMut(&Predictor) -> Result<f64>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
    let mut opt = Adam::new(model.param_count(), cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let a = cfg.mse_weight;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; model.param_count()];
            for &i in batch {
                let sample = &train_set[i];
                let (pred, cache) = model.forward(&sample.z)?;
                let (mut loss, mut g) = if a < 1.0 {
                    objective.loss(&pred, sample)?
                } else {
                    (0.0, vec![0.0; pred.len()])
                };
                if a > 0.0 {
                    let (mse, gm) = loss_two_stage(&pred, &sample.target)?;
                    loss = (1.0 - a) * loss + a * mse;
                    for (gi, mi) in g.iter_mut().zip(gm) {
                        *gi = (1.0 - a) * *gi + a * mi;
                    }
                }
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SolverFailure(format!(
                        "non-finite loss at epoch {epoch}, sample {i}"
                    )));
                }
                total += loss;
                let gp = model.backward(&cache, &g)?;
                for (acc, v) in grad.iter_mut().zip(gp) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= scale);
            let mut params = model.params();
            opt.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_metric: validate(model)?,
        });
    }
    Ok(history)
}
