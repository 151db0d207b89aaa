//! Multilevel Monte Carlo (MLMC) and multilevel Richardson-Romberg (ML2R)
//! estimators with optimal parameter calibration.
//!
//! The usual flow is [`calibration::calibrate`] to obtain a
//! [`calibration::MultilevelPlan`], then [`engine::Engine::run`] with a
//! [`engine::LevelSampler`] such as the families in [`models`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod models;
pub mod numeric;
pub mod stream;
pub mod weights;

pub use calibration::{calibrate, EstimatorKind, MultilevelPlan, StructuralParams};
pub use engine::{Engine, LevelSample, LevelSampler, LevelSpec};
pub use error::{Error, Result};
pub use weights::{ml2r_weights, WeightTable};
