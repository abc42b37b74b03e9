//! Predictors, losses and the training loop.

mod loss;
mod model;
mod optim;
mod train;

pub use loss::{loss_owa_dq, loss_two_stage, percent_regret, regret};
pub use model::{Dense, ForwardCache, Layout, Predictor, PredictorSpec};
pub use optim::Adam;
pub use train::{train, EpochRecord, Method, MseObjective, Objective, Sample, TrainConfig};
