//! First stage: each area estimates `(U, K, L)` over its buses, internal
//! branches and incident tie-lines, agreeing with neighbors on tie-lines.

use nalgebra::DVector;

use super::local::{LocalProblem, SharedSlot};
use super::{collect_copies, run_rounds, AreaWorker, Message, MessageBus, Payload, Phase, Residuals};
use super::{StageOutcome, StageParams, TieValue};
use crate::bilinear::{build_stage1_matrices, StageOneLayout};
use crate::case::{AreaView, NetworkCase};
use crate::measurement::{AreaMeasurements, MeasurementKind, MeasurementSet, ResidualScaling};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Stage1Area {
    pub(crate) problem: LocalProblem,
    layout: StageOneLayout,
    /// Global measurement index of every row.
    rows: Vec<usize>,
    /// Factor each row was multiplied by.
    row_scale: Vec<f64>,
    neighbors: Vec<usize>,
}

/// Builds and factorizes one area's first-stage problem. PMU angles are not
/// part of this stage and are skipped.
pub fn init_stage1(
    case: &NetworkCase,
    view: &AreaView,
    ms: &MeasurementSet,
    owned: &AreaMeasurements,
    scaling: ResidualScaling,
    params: &StageParams,
) -> Result<Stage1Area> {
    let layout = StageOneLayout::new(case, view.buses.clone(), view.stage1_branches());
    let rows: Vec<usize> = owned
        .indices
        .iter()
        .copied()
        .filter(|&i| !matches!(ms.measurements[i].kind, MeasurementKind::PmuAngle { .. }))
        .collect();
    let kinds: Vec<MeasurementKind> = rows.iter().map(|&i| ms.measurements[i].kind).collect();
    let (b, e) = build_stage1_matrices(case, &kinds, &owned.zero_injections, &layout)?;
    let row_scale: Vec<f64> = rows.iter().map(|&i| scaling.row_factor(&ms.measurements[i])).collect();
    let thresholds = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&i| params.lambda * scaling.threshold_factor(&ms.measurements[i])),
    );
    let mut m = b.to_dense();
    for (r, s) in row_scale.iter().enumerate() {
        m.row_mut(r).scale_mut(*s);
    }
    let z = DVector::from_iterator(rows.len(), rows.iter().zip(&row_scale).map(|(&i, s)| ms.measurements[i].value * s));

    let mut start = DVector::zeros(layout.dim());
    for &i in layout.buses() {
        start[layout.u(i).unwrap()] = 1.0;
    }
    for &k in layout.branches() {
        start[layout.k(k).unwrap()] = 1.0;
    }
    let shared = view
        .ties
        .iter()
        .flat_map(|(&nbr, ties)| {
            ties.iter().map(move |&k| (nbr, k))
        })
        .map(|(nbr, k)| {
            let p = layout.k(k).expect("tie-line in the first-stage layout");
            SharedSlot { key: k, slots: [Some(p), Some(p + 1)], peers: vec![nbr] }
        })
        .collect();
    let mut problem = LocalProblem::new(
        view.area,
        m,
        z,
        e.to_dense(),
        params.rho,
        thresholds,
        params.augmentation,
        shared,
        start,
    )?;
    problem.inner_sweeps = params.inner_sweeps;
    Ok(Stage1Area { problem, layout, rows, row_scale, neighbors: view.neighbors() })
}

impl Stage1Area {
    pub fn area(&self) -> usize {
        self.problem.area
    }

    pub fn layout(&self) -> &StageOneLayout {
        &self.layout
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.problem.w
    }

    pub fn y_hat(&self) -> &DVector<f64> {
        &self.problem.w_hat
    }

    /// Dimension of the augmented gain matrix.
    pub fn gain_dim(&self) -> usize {
        self.problem.m.ncols()
    }

    /// Number of zero-injection constraint rows.
    pub fn constraint_rows(&self) -> usize {
        self.problem.e.nrows()
    }

    /// `‖E y − z_e‖∞` for the current iterate.
    pub fn constraint_violation(&self) -> f64 {
        self.problem.constraint_violation()
    }

    /// `(measurement index, outlier in measurement units)` for every nonzero
    /// entry of `o`.
    pub fn outliers(&self) -> Vec<(usize, f64)> {
        self.problem
            .o
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(r, v)| (self.rows[r], v / self.row_scale[r]))
            .collect()
    }

    /// Unscaled residual `z − B y` per measurement index.
    pub fn residuals(&self) -> Vec<(usize, f64)> {
        let r = self.problem.residual();
        self.rows.iter().enumerate().map(|(n, &i)| (i, r[n] / self.row_scale[n])).collect()
    }
}

impl AreaWorker for Stage1Area {
    fn area(&self) -> usize {
        self.problem.area
    }

    fn local_update(&mut self) {
        self.problem.update();
    }

    fn outgoing(&self) -> Vec<Message> {
        self.neighbors
            .iter()
            .map(|&to| Message {
                from: self.problem.area,
                to,
                payload: Payload::TieLines(
                    self.problem
                        .values_for(to)
                        .into_iter()
                        .map(|(branch, [k, l])| TieValue { branch, k, l })
                        .collect(),
                ),
            })
            .collect()
    }

    fn absorb(&mut self, inbox: &[Message]) -> Result<Residuals> {
        let copies = collect_copies(inbox, |p| match p {
            Payload::TieLines(v) => Ok(v.iter().map(|t| (t.branch, [t.k, t.l])).collect()),
            Payload::BoundaryBuses(_) => Err(Error::Protocol("bus states sent during the first stage".into())),
        })?;
        self.problem.consensus(&copies)
    }

    fn objective(&self) -> f64 {
        self.problem.objective()
    }
}

/// Runs the first stage to convergence on a fresh bus phase.
pub fn run_stage1(areas: &mut [Stage1Area], bus: &mut MessageBus, params: &StageParams) -> Result<StageOutcome> {
    bus.set_phase(Phase::StageOne);
    run_rounds(areas, bus, params)
}
