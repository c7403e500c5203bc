//! Experiment orchestration: scenario generation, the distributed pipeline,
//! metrics, reports and Monte Carlo sweeps.

mod pipeline;
mod report;
mod sweep;

pub use pipeline::{run_drbse, DrbseRun, Outlier};
pub use report::{BusEstimate, EstimationReport, MessageStat, ReportBus, StageSummary};
pub use sweep::{compare_methods, sweep_bad_data, sweep_scenario, ComparisonRow, Method, SweepRow, SweepSpec};

use serde::{Deserialize, Serialize};

use crate::admm::{Augmentation, Schedule, StopRule, DEFAULT_INNER_SWEEPS};
use crate::measurement::{
    apply_noise, inject_bad_data, true_measurements, BadDataSpec, MeasurementPlan, MeasurementSet, NoiseSpec,
    ResidualScaling,
};
use crate::{Error, NetworkCase, Result};

pub const DEFAULT_LAMBDA: f64 = 1.34;
pub const DEFAULT_RHO_F: f64 = 1.0;
pub const DEFAULT_RHO_S: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 5e-4;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Estimator knobs shared by every entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub lambda: f64,
    pub rho_f: f64,
    pub rho_s: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub augmentation: Augmentation,
    pub scaling: ResidualScaling,
    pub schedule: Schedule,
    pub stop: StopRule,
    /// Local `w`/`o` alternations per ADMM round.
    pub inner_sweeps: usize,
    /// Run the second stage even if the first did not converge.
    pub force: bool,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            lambda: DEFAULT_LAMBDA,
            rho_f: DEFAULT_RHO_F,
            rho_s: DEFAULT_RHO_S,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            augmentation: Augmentation::default(),
            scaling: ResidualScaling::default(),
            schedule: Schedule::default(),
            stop: StopRule::default(),
            inner_sweeps: DEFAULT_INNER_SWEEPS,
            force: false,
        }
    }
}

impl EstimatorSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lambda", self.lambda), ("rho_f", self.rho_f), ("rho_s", self.rho_s), ("epsilon", self.epsilon)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.inner_sweeps == 0 {
            return Err(Error::InvalidArgument("inner_sweeps must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// How to synthesize one measurement scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub plan: MeasurementPlan,
    pub noise: NoiseSpec,
    pub bad_data: Option<BadDataSpec>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec { plan: MeasurementPlan::full(), noise: NoiseSpec::default(), bad_data: None }
    }
}

/// True values, then noise, then gross errors.
pub fn generate_measurements(case: &NetworkCase, spec: &ScenarioSpec) -> Result<MeasurementSet> {
    let clean = true_measurements(case, &spec.plan.kinds(case))?;
    let noisy = apply_noise(&clean, &spec.noise);
    match &spec.bad_data {
        Some(bad) => inject_bad_data(&noisy, bad),
        None => Ok(noisy),
    }
}

/// Average absolute state errors. `s_theta` skips the reference bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub s_v: f64,
    pub s_theta: f64,
}

pub fn compute_metrics(case: &NetworkCase, v: &[f64], theta: &[f64]) -> Result<Metrics> {
    let n = case.n_buses();
    if v.len() != n || theta.len() != n {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} magnitudes and {} angles for {n} buses",
            v.len(),
            theta.len()
        )));
    }
    let r = case.reference_pos();
    let s_v = case.buses.iter().zip(v).map(|(b, x)| (x - b.v_true).abs()).sum::<f64>() / n as f64;
    let s_theta = case
        .buses
        .iter()
        .zip(theta)
        .enumerate()
        .filter(|(i, _)| *i != r)
        .map(|(_, (b, x))| (x - b.theta_true).abs())
        .sum::<f64>()
        / (n - 1).max(1) as f64;
    Ok(Metrics { s_v, s_theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::ieee14;

    #[test]
    fn exact_estimate_scores_zero() {
        let case = ieee14();
        let m = compute_metrics(&case, &case.true_magnitudes(), &case.true_angles()).unwrap();
        assert_eq!((m.s_v, m.s_theta), (0.0, 0.0));
    }

    #[test]
    fn single_bus_offsets() {
        let case = ieee14();
        let mut v = case.true_magnitudes();
        v[3] += 0.014;
        let mut th = case.true_angles();
        th[5] += 0.013;
        let m = compute_metrics(&case, &v, &th).unwrap();
        assert!((m.s_v - 0.001).abs() < 1e-15);
        assert!((m.s_theta - 0.001).abs() < 1e-15);
    }

    #[test]
    fn reference_angle_error_is_ignored() {
        let case = ieee14();
        let mut th = case.true_angles();
        th[case.reference_pos()] += 1.0;
        let m = compute_metrics(&case, &case.true_magnitudes(), &th).unwrap();
        assert_eq!(m.s_theta, 0.0);
    }

    #[test]
    fn settings_reject_nonpositive_penalty() {
        let s = EstimatorSettings { rho_s: 0.0, ..EstimatorSettings::default() };
        assert!(s.validate().is_err());
        assert!(EstimatorSettings::default().validate().is_ok());
    }
}
