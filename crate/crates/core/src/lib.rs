//! Simulation of vector AC magnetometry with NV-center ensembles under
//! multi-frequency Hahn-echo control.
//!
//! The physics core (`geometry`, `spin`, `linalg`, `ensemble_signal`) is
//! generic over [`Scalar`]; the experiment and Monte Carlo layers run in
//! `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod geometry;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod sequence;
pub mod spin;

pub use error::{Error, Result};
pub use geometry::{Axis, Component, SignPattern};
pub use scalar::Scalar;

pub type Vec3f = geometry::Vec3<f64>;
pub type Vec3f32 = geometry::Vec3<f32>;
pub type AxisSetf = geometry::AxisSet<f64>;
pub type EchoConfigf = spin::EchoConfig<f64>;
pub type DriveConfigf = spin::DriveConfig<f64>;
pub type TwoLevelStatef = spin::TwoLevelState<f64>;
pub type StaticFieldCalibrationf = geometry::StaticFieldCalibration<f64>;
