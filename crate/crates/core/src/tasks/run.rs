use crate::error::Result;
use crate::learn::{train, EpochRecord, Method, Objective, Predictor, Sample, TrainConfig};

use super::dataset::TaskKind;

/// Learning rate and regression weight used when a run does not override them.
pub fn default_hyper(task: TaskKind, method: Method) -> (f64, f64) {
    match (task, method) {
        (TaskKind::Rank, _) => (1e-2, 0.0),
        (_, Method::TwoStage) => (5e-3, 1.0),
        (_, Method::Uws) => (1e-2, 0.3),
        (_, Method::OwaQp) => (1e-2, 0.4),
        (_, Method::OwaMoreau) => (1e-2, 0.1),
        (_, _) => (1e-2, 0.0),
    }
}

/// Trained model with its per-epoch history. The returned model holds the
/// parameters of the epoch with the lowest validation metric.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Predictor,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn fit(
    mut model: Predictor,
    train_set: &[Sample],
    objective: &dyn Objective,
    cfg: &TrainConfig,
    validate: &mut dyn FnMut(&Predictor) -> Result<f64>,
) -> Result<TrainedModel> {
    let mut best = (f64::INFINITY, model.params());
    let mut tracked = |p: &Predictor| -> Result<f64> {
        let v = validate(p)?;
        if v < best.0 {
            best = (v, p.params());
        }
        Ok(v)
    };
    let history = train(&mut model, train_set, objective, cfg, &mut tracked)?;
    let best_epoch = history
        .iter()
        .filter(|r| r.val_metric == best.0)
        .map(|r| r.epoch)
        .next()
        .unwrap_or(0);
    if best.0.is_finite() {
        model.set_params(&best.1)?;
    }
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
    })
}
