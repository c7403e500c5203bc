use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, generate_measurements, run_drbse, EstimatorSettings, Metrics, ScenarioSpec};
use crate::centralized::{centralized_rbse, gauss_newton_wls, wls_lnrt, RobustOptions, WlsOptions, DEFAULT_LNRT_THRESHOLD};
use crate::measurement::{trial_seed, BadDataSpec, MeasurementPlan, MeasurementSet, NoiseSpec};
use crate::{AreaPartition, Error, NetworkCase, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Drbse,
    Rbse,
    Wls,
    WlsLnrt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Drbse => "drbse",
            Method::Rbse => "rbse",
            Method::Wls => "wls",
            Method::WlsLnrt => "wls_lnrt",
        }
    }

    /// Estimated `(V, θ)` per bus position.
    pub fn estimate(
        &self,
        case: &NetworkCase,
        partition: &AreaPartition,
        ms: &MeasurementSet,
        settings: &EstimatorSettings,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let wls = WlsOptions::default();
        let est = match self {
            Method::Drbse => {
                let run = run_drbse(case, partition, ms, settings)?;
                if !run.converged() {
                    return Err(Error::Numerical("distributed estimator did not converge".into()));
                }
                return run.state.ok_or_else(|| Error::Numerical("no state assembled".into()));
            }
            Method::Rbse => {
                let opts = RobustOptions { lambda: settings.lambda, scaling: settings.scaling, ..RobustOptions::default() };
                centralized_rbse(case, ms, &opts)?
            }
            Method::Wls => gauss_newton_wls(case, ms, &wls)?,
            Method::WlsLnrt => wls_lnrt(case, ms, DEFAULT_LNRT_THRESHOLD, &wls)?,
        };
        if !est.converged {
            return Err(Error::Numerical(format!("{} did not converge", self.name())));
        }
        Ok((est.v, est.theta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub pmu_buses: Vec<usize>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            fractions: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            trials: 20,
            seed: 0,
            methods: vec![Method::Drbse, Method::Wls, Method::WlsLnrt],
            pmu_buses: Vec::new(),
        }
    }
}

/// Mean metrics of one method at one bad-data fraction. Failed trials are
/// counted and left out of the means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub fraction: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_s_v: f64,
    pub mean_s_theta: f64,
}

/// Scenario of trial `t` at bad-data fraction `f`. The trial seed drives the
/// noise and both bad-data streams, so fractions share the same noise draw.
pub fn sweep_scenario(pmu_buses: &[usize], fraction: f64, seed: u64, trial: usize) -> ScenarioSpec {
    let s = trial_seed(seed, trial as u64);
    ScenarioSpec {
        plan: MeasurementPlan::Full { pmu_buses: pmu_buses.to_vec() },
        noise: NoiseSpec::default().with_seed(s),
        bad_data: (fraction > 0.0).then(|| BadDataSpec::fraction(fraction, s)),
    }
}

pub fn sweep_bad_data(
    case: &NetworkCase,
    partition: &AreaPartition,
    settings: &EstimatorSettings,
    spec: &SweepSpec,
) -> Result<Vec<SweepRow>> {
    settings.validate()?;
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("a sweep needs at least one trial".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.fractions.len()).flat_map(|f| (0..spec.trials).map(move |t| (f, t))).collect();
    // One entry per job and method; order is fixed by the job list.
    let results: Vec<Vec<Option<Metrics>>> = jobs
        .par_iter()
        .map(|&(f, t)| {
            let scenario = sweep_scenario(&spec.pmu_buses, spec.fractions[f], spec.seed, t);
            let Ok(ms) = generate_measurements(case, &scenario) else {
                return vec![None; spec.methods.len()];
            };
            spec.methods
                .iter()
                .map(|m| {
                    let (v, th) = m.estimate(case, partition, &ms, settings).ok()?;
                    compute_metrics(case, &v, &th).ok()
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (mi, &method) in spec.methods.iter().enumerate() {
        for (fi, &fraction) in spec.fractions.iter().enumerate() {
            let ok: Vec<Metrics> = jobs
                .iter()
                .zip(&results)
                .filter(|((f, _), _)| *f == fi)
                .filter_map(|(_, r)| r[mi])
                .collect();
            let n = ok.len().max(1) as f64;
            rows.push(SweepRow {
                method,
                fraction,
                trials: spec.trials,
                failures: spec.trials - ok.len(),
                mean_s_v: if ok.is_empty() { f64::NAN } else { ok.iter().map(|m| m.s_v).sum::<f64>() / n },
                mean_s_theta: if ok.is_empty() { f64::NAN } else { ok.iter().map(|m| m.s_theta).sum::<f64>() / n },
            });
        }
    }
    Ok(rows)
}

/// Per-bus estimates of every method on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub id: usize,
    pub v_true: f64,
    pub theta_true: f64,
    /// `(method, V, θ)` in the requested method order.
    pub estimates: Vec<(Method, f64, f64)>,
}

pub fn compare_methods(
    case: &NetworkCase,
    partition: &AreaPartition,
    ms: &MeasurementSet,
    settings: &EstimatorSettings,
    methods: &[Method],
) -> Result<Vec<ComparisonRow>> {
    let states = methods
        .iter()
        .map(|m| m.estimate(case, partition, ms, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| ComparisonRow {
            id: b.id,
            v_true: b.v_true,
            theta_true: b.theta_true,
            estimates: methods.iter().zip(&states).map(|(m, (v, t))| (*m, v[i], t[i])).collect(),
        })
        .collect())
}
