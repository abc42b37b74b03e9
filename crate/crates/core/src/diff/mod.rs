//! Backward passes through the optimization mappings.
//!
//! Every route maps a cotangent `g` on the solver output to a cotangent on
//! the solver parameters. Matrix-valued cotangents are row-major.

mod blackbox;
mod fixed_point;
mod kkt;
mod spo;

pub use blackbox::backward_blackbox_lp;
pub use fixed_point::{
    backward_fixed_point, fixed_point_jacobians, FixedPointBackward, FixedPointJacobians,
    MoreauLayer, DAMPING,
};
pub use kkt::{backward_qp_kkt, KktBackward, QpLayer};
pub use spo::{
    birkhoff_vertex_oracle, spo_plus_for_owa_rank, spo_plus_loss, spo_plus_rank_loss, spo_plus_rank_loss_and_grad,
    spo_plus_subgradient, RankSpoInstance,
};

use crate::error::Result;

/// A solved forward pass that can pull cotangents back to its parameters.
pub trait VectorJacobianHook {
    /// The forward solution.
    fn solution(&self) -> &[f64];
    /// Pulls back `g` (same length as the solution) to a parameter cotangent.
    fn backward(&self, g: &[f64]) -> Result<Vec<f64>>;
}
