//! Second stage: each area estimates `(α, θ)` over its buses plus the far
//! ends of the tie-lines it owns, agreeing on every bus held by more than
//! one area.

use nalgebra::{DMatrix, DVector};

use super::local::{LocalProblem, SharedSlot};
use super::{collect_copies, run_rounds, AreaWorker, BusValue, Message, MessageBus, Payload, Phase, Residuals};
use super::{Stage1Area, StageOutcome, StageParams};
use crate::bilinear::{build_stage2_matrix, nonlinear_transform, state_from_x, IntermediateLayout, StateLayout, UEntry};
use crate::case::{AreaView, ConsensusGroup, NetworkCase};
use crate::measurement::{AreaMeasurements, MeasurementKind, MeasurementSet};
use crate::{Error, Result};

/// Local change of variables from a converged first-stage area: `ũ` over the
/// area's buses, internal branches, owned tie-lines and PMU angles.
/// Uses nothing but data the area already holds.
pub fn local_transform(
    case: &NetworkCase,
    view: &AreaView,
    stage1: &Stage1Area,
    ms: &MeasurementSet,
    owned: &AreaMeasurements,
) -> Result<(IntermediateLayout, DVector<f64>)> {
    let mut pmu = Vec::new();
    let mut angles = Vec::new();
    for &i in &owned.indices {
        let m = &ms.measurements[i];
        if let MeasurementKind::PmuAngle { bus } = m.kind {
            pmu.push(case.require_bus(bus)?);
            angles.push(m.value);
        }
    }
    let layout = IntermediateLayout::new(case, view.buses.clone(), view.stage2_branches(), pmu);
    let u = nonlinear_transform(case, stage1.y(), stage1.layout(), &layout, &angles)
        .map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("area {}: {msg}", view.area)),
            other => other,
        })?;
    Ok((layout, u))
}

#[derive(Debug, Clone)]
pub struct Stage2Area {
    pub(crate) problem: LocalProblem,
    x_layout: StateLayout,
    rows: Vec<UEntry>,
    peers: Vec<usize>,
}

/// Builds and factorizes one area's second-stage problem from its `ũ`.
pub fn init_stage2(
    case: &NetworkCase,
    view: &AreaView,
    groups: &[ConsensusGroup],
    u_layout: &IntermediateLayout,
    u_tilde: DVector<f64>,
    params: &StageParams,
) -> Result<Stage2Area> {
    let x_layout = StateLayout::new(case, view.stage2_buses());
    let c = build_stage2_matrix(case, u_layout, &x_layout)?;
    let mut peers = Vec::new();
    let shared = groups
        .iter()
        .filter(|g| g.members.contains(&view.area))
        .map(|g| {
            let others: Vec<usize> = g.members.iter().copied().filter(|&a| a != view.area).collect();
            peers.extend(others.iter().copied());
            SharedSlot { key: g.bus, slots: [x_layout.alpha(g.bus), x_layout.theta(g.bus)], peers: others }
        })
        .collect();
    peers.sort_unstable();
    peers.dedup();
    let n = x_layout.dim();
    let thresholds = DVector::from_element(c.nrows(), params.lambda);
    let mut problem = LocalProblem::new(
        view.area,
        c.to_dense(),
        u_tilde,
        DMatrix::zeros(0, n),
        params.rho,
        thresholds,
        params.augmentation,
        shared,
        DVector::zeros(n),
    )
    .map_err(|e| match e {
        Error::Numerical(msg) => Error::Observability(msg),
        other => other,
    })?;
    problem.inner_sweeps = params.inner_sweeps;
    Ok(Stage2Area { problem, x_layout, rows: c.rows, peers })
}

impl Stage2Area {
    pub fn area(&self) -> usize {
        self.problem.area
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.problem.w
    }

    pub fn x_layout(&self) -> &StateLayout {
        &self.x_layout
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    /// `(V, θ)` of every bus in the area's scope, keyed by bus position.
    pub fn state(&self) -> Vec<(usize, f64, f64)> {
        let (v, th) = state_from_x(&self.problem.w, &self.x_layout);
        self.x_layout.buses().iter().zip(v.into_iter().zip(th)).map(|(&i, (v, t))| (i, v, t)).collect()
    }

    /// Nonzero outliers per `ũ` entry.
    pub fn outliers(&self) -> Vec<(UEntry, f64)> {
        self.problem
            .o
            .iter()
            .zip(&self.rows)
            .filter(|(v, _)| **v != 0.0)
            .map(|(v, e)| (*e, *v))
            .collect()
    }
}

impl AreaWorker for Stage2Area {
    fn area(&self) -> usize {
        self.problem.area
    }

    fn local_update(&mut self) {
        self.problem.update();
    }

    fn outgoing(&self) -> Vec<Message> {
        self.peers
            .iter()
            .map(|&to| Message {
                from: self.problem.area,
                to,
                payload: Payload::BoundaryBuses(
                    self.problem
                        .values_for(to)
                        .into_iter()
                        .map(|(bus, [alpha, theta])| BusValue { bus, alpha, theta })
                        .collect(),
                ),
            })
            .collect()
    }

    fn absorb(&mut self, inbox: &[Message]) -> Result<Residuals> {
        let copies = collect_copies(inbox, |p| match p {
            Payload::BoundaryBuses(v) => Ok(v.iter().map(|b| (b.bus, [b.alpha, b.theta])).collect()),
            Payload::TieLines(_) => Err(Error::Protocol("tie-line values sent during the second stage".into())),
        })?;
        self.problem.consensus(&copies)
    }

    fn objective(&self) -> f64 {
        self.problem.objective()
    }
}

/// Runs the second stage to convergence on a fresh bus phase.
pub fn run_stage2(areas: &mut [Stage2Area], bus: &mut MessageBus, params: &StageParams) -> Result<StageOutcome> {
    bus.set_phase(Phase::StageTwo);
    run_rounds(areas, bus, params)
}
