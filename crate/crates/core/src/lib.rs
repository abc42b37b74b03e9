//! Predict-then-optimize training through ordered weighted averaging (OWA)
//! optimization.

pub mod error;
pub mod geometry;
pub mod learn;
pub mod diff;
pub mod owa;
pub mod solvers;
pub mod tasks;

pub use error::{Error, Result};
