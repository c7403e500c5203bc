//! The three-step distributed estimator over an in-process message bus.

use serde::Serialize;

use super::EstimatorSettings;
use crate::admm::{
    init_stage1, init_stage2, local_transform, run_stage1, run_stage2, Delivery, MessageBus, Phase, StageOutcome,
    StageParams,
};
use crate::bilinear::UEntry;
use crate::case::{build_partition, consensus_groups, home_areas, AreaPartition, NetworkCase};
use crate::measurement::{partition_measurements, MeasurementSet};
use crate::{Error, Result};

/// Nonzero entry of an outlier vector after convergence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outlier {
    pub stage: u8,
    pub area: usize,
    pub kind: String,
    pub location: String,
    /// Measurement index for first-stage outliers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<usize>,
    pub value: f64,
}

/// Everything a distributed run produces.
#[derive(Debug, Clone)]
pub struct DrbseRun {
    pub stage1: StageOutcome,
    pub stage2: Option<StageOutcome>,
    /// `(V, θ)` per bus position from the home-area copy; absent when the
    /// second stage was skipped.
    pub state: Option<(Vec<f64>, Vec<f64>)>,
    /// Largest difference between any copy of a shared bus and its
    /// home-area value, over `α` and `θ`.
    pub copy_disagreement: f64,
    pub outliers: Vec<Outlier>,
    pub deliveries: Vec<Delivery>,
    /// Converged first-stage vector of each area.
    pub stage1_y: Vec<(crate::bilinear::StageOneLayout, nalgebra::DVector<f64>)>,
}

impl DrbseRun {
    pub fn converged(&self) -> bool {
        self.stage1.converged && self.stage2.as_ref().is_some_and(|s| s.converged)
    }
}

fn stage_params(settings: &EstimatorSettings, rho: f64) -> StageParams {
    StageParams {
        rho,
        lambda: settings.lambda,
        epsilon: settings.epsilon,
        max_iter: settings.max_iter,
        augmentation: settings.augmentation,
        schedule: settings.schedule,
        stop: settings.stop,
        inner_sweeps: settings.inner_sweeps,
    }
}

fn describe_u(case: &NetworkCase, e: UEntry) -> (String, String) {
    let bus = |i: usize| case.buses[i].id;
    let branch = |k: usize| format!("{}-{}", case.branches[k].from, case.branches[k].to);
    match e {
        UEntry::Alpha(i) => ("alpha_bus".into(), bus(i).to_string()),
        UEntry::AlphaBranch(k) => ("alpha_branch".into(), branch(k)),
        UEntry::ThetaBranch(k) => ("theta_branch".into(), branch(k)),
        UEntry::ThetaBus(i) => ("pmu_angle".into(), bus(i).to_string()),
    }
}

/// Runs both ADMM stages and the local transform between them.
pub fn run_drbse(
    case: &NetworkCase,
    partition: &AreaPartition,
    ms: &MeasurementSet,
    settings: &EstimatorSettings,
) -> Result<DrbseRun> {
    settings.validate()?;
    let views = build_partition(case, partition)?;
    let owned = partition_measurements(ms, case, &views)?;
    let mut bus = MessageBus::new();

    let p1 = stage_params(settings, settings.rho_f);
    let mut s1 = views
        .iter()
        .zip(&owned)
        .map(|(v, o)| init_stage1(case, v, ms, o, settings.scaling, &p1))
        .collect::<Result<Vec<_>>>()?;
    let stage1 = run_stage1(&mut s1, &mut bus, &p1)?;

    let mut outliers = Vec::new();
    for a in &s1 {
        for (idx, value) in a.outliers() {
            let kind = &ms.measurements[idx].kind;
            let label = kind.label();
            let (name, loc) = label.split_once('(').unwrap_or((label.as_str(), ""));
            outliers.push(Outlier {
                stage: 1,
                area: a.area(),
                kind: name.to_string(),
                location: loc.trim_end_matches(')').to_string(),
                measurement: Some(idx),
                value,
            });
        }
    }
    let stage1_y = s1.iter().map(|a| (a.layout().clone(), a.y().clone())).collect();
    let mut run = DrbseRun {
        stage1,
        stage2: None,
        state: None,
        copy_disagreement: 0.0,
        outliers,
        deliveries: Vec::new(),
        stage1_y,
    };
    if !run.stage1.converged && !settings.force {
        run.deliveries = bus.log().to_vec();
        return Ok(run);
    }

    // Each area maps its own first-stage result; nothing crosses the bus.
    bus.set_phase(Phase::Transform);
    let transformed = views
        .iter()
        .zip(&s1)
        .zip(&owned)
        .map(|((v, a), o)| local_transform(case, v, a, ms, o))
        .collect::<Result<Vec<_>>>()?;
    if bus.deliveries_in(Phase::Transform).next().is_some() {
        return Err(Error::Protocol("messages exchanged during the local transform".into()));
    }

    let groups = consensus_groups(&views, case.n_buses());
    let p2 = stage_params(settings, settings.rho_s);
    let mut s2 = views
        .iter()
        .zip(transformed)
        .map(|(v, (layout, u))| init_stage2(case, v, &groups, &layout, u, &p2))
        .collect::<Result<Vec<_>>>()?;
    let stage2 = run_stage2(&mut s2, &mut bus, &p2)?;
    run.deliveries = bus.log().to_vec();

    for a in &s2 {
        for (entry, value) in a.outliers() {
            let (kind, location) = describe_u(case, entry);
            run.outliers.push(Outlier { stage: 2, area: a.area(), kind, location, measurement: None, value });
        }
    }

    let home = home_areas(&views, case.n_buses());
    let mut v = vec![f64::NAN; case.n_buses()];
    let mut theta = vec![f64::NAN; case.n_buses()];
    for a in &s2 {
        for (i, vi, ti) in a.state() {
            if home[i] == a.area() {
                v[i] = vi;
                theta[i] = ti;
            }
        }
    }
    let mut gap = 0.0f64;
    for a in &s2 {
        let layout = a.x_layout();
        let x = a.x();
        for &i in layout.buses() {
            let alpha_home = 2.0 * v[i].ln();
            gap = gap.max((x[layout.alpha(i).unwrap()] - alpha_home).abs());
            if let Some(p) = layout.theta(i) {
                gap = gap.max((x[p] - theta[i]).abs());
            }
        }
    }
    run.copy_disagreement = gap;
    run.state = Some((v, theta));
    run.stage2 = Some(stage2);
    Ok(run)
}
