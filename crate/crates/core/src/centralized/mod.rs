//! Centralized estimators used as references for the distributed pipeline.

mod rbse;
mod wls;

pub use rbse::{centralized_rbse, RobustOptions};
pub use wls::{gauss_newton_wls, wls_lnrt, WlsOptions, DEFAULT_LNRT_THRESHOLD};

use serde::Serialize;

/// Result of a centralized estimator. `v` and `theta` are indexed by bus
/// position; `theta` is zero at the reference bus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralEstimate {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// First-stage outliers as `(measurement index, value)`.
    pub o_f: Vec<(usize, f64)>,
    /// Second-stage outliers as `(ũ row, value)`.
    pub o_s: Vec<(usize, f64)>,
    pub converged: bool,
    pub iterations: usize,
    /// Measurement indices removed by the residual test, in removal order.
    pub removed_measurements: Vec<usize>,
    /// Converged first-stage vector in the global layout (robust estimator only).
    #[serde(skip)]
    pub y: Option<nalgebra::DVector<f64>>,
}
