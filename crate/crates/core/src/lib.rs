//! Distributed robust bilinear state estimation (D-RBSE) for multi-area
//! power networks.
//!
//! The estimator runs in three steps. A first linear stage estimates the
//! intermediate vector `y = {U_i, K_ij, L_ij}` from conventional
//! measurements, a purely local nonlinear change of variables maps `y` onto
//! `u = {α_i, α_ij, θ_ij}`, and a second linear stage recovers the state
//! `x = (α, θ)`. Both linear stages are decomposed over control areas and
//! solved with consensus ADMM, exchanging only tie-line or boundary-bus
//! values between neighbours. Gross errors are absorbed by ℓ1-penalised
//! outlier vectors updated with a soft-threshold.
//!
//! Centralized oracles (robust bilinear, Gauss–Newton WLS and WLS with the
//! largest normalized residual test) live in [`centralized`].

pub mod admm;
pub mod bilinear;
pub mod case;
pub mod centralized;
mod error;
pub(crate) mod linalg;
pub mod measurement;
pub mod runtime;

pub use error::{Error, Result};

pub use admm::{Augmentation, Schedule, StageOutcome, StageParams, StopRule, TraceRow};
pub use bilinear::{soft_threshold, soft_threshold_each, soft_threshold_scalar};
pub use case::{AreaPartition, AreaView, Branch, Bus, NetworkCase};
pub use measurement::{
    BadDataSpec, Measurement, MeasurementKind, MeasurementPlan, MeasurementSet, NoiseSpec,
    ResidualScaling,
};
pub use runtime::{EstimationReport, EstimatorSettings, Metrics, ScenarioSpec};

