use nalgebra::{DMatrix, DVector};

use super::CentralEstimate;
use crate::bilinear::{
    build_stage1_matrices, build_stage2_matrix, nonlinear_transform, soft_threshold_each, state_from_x,
    IntermediateLayout, StageOneLayout, StateLayout,
};
use crate::case::NetworkCase;
use crate::linalg::Kkt;
use crate::measurement::{MeasurementKind, MeasurementSet, ResidualScaling};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustOptions {
    pub lambda: f64,
    pub scaling: ResidualScaling,
    /// Stop when both the iterate and the outlier vector move less than this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions { lambda: 1.34, scaling: ResidualScaling::default(), tol: 1e-9, max_sweeps: 20_000 }
    }
}

struct Alternation {
    w: DVector<f64>,
    o: DVector<f64>,
    sweeps: usize,
    converged: bool,
}

/// `min ½‖z − M w − o‖² + λ‖o‖₁ s.t. E w = 0` by exact minimization in `w`
/// alternated with the proximal step in `o`.
fn alternate(
    m: &DMatrix<f64>,
    z: &DVector<f64>,
    e: &DMatrix<f64>,
    lambda: &DVector<f64>,
    opts: &RobustOptions,
) -> Result<Alternation> {
    let kkt = Kkt::new(&m.tr_mul(m), e)?;
    let zeros = DVector::zeros(e.nrows());
    let objective = |w: &DVector<f64>, o: &DVector<f64>| {
        0.5 * (z - m * w - o).norm_squared() + lambda.dot(&o.abs())
    };
    let mut o = DVector::zeros(m.nrows());
    let mut w = kkt.solve(&m.tr_mul(z), &zeros);
    let mut last = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let o_next = soft_threshold_each(&(z - m * &w), lambda);
        let w_next = kkt.solve(&m.tr_mul(&(z - &o_next)), &zeros);
        let change = (&w_next - &w).amax().max((&o_next - &o).amax());
        w = w_next;
        o = o_next;
        let f = objective(&w, &o);
        // Block coordinate descent never increases the objective.
        assert!(f <= last + 1e-9 * last.abs().max(1.0), "robust objective rose from {last} to {f}");
        last = f;
        if change < opts.tol {
            return Ok(Alternation { w, o, sweeps: sweep, converged: true });
        }
    }
    Ok(Alternation { w, o, sweeps: opts.max_sweeps, converged: false })
}

/// Centralized robust bilinear estimator over the whole network.
pub fn centralized_rbse(case: &NetworkCase, ms: &MeasurementSet, opts: &RobustOptions) -> Result<CentralEstimate> {
    if !(opts.lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("λ = {} must be positive", opts.lambda)));
    }
    let layout = StageOneLayout::global(case);
    let mut rows = Vec::new();
    let mut pmu = Vec::new();
    let mut pmu_angles = Vec::new();
    for (i, m) in ms.measurements.iter().enumerate() {
        match m.kind {
            MeasurementKind::PmuAngle { bus } => {
                pmu.push(case.require_bus(bus)?);
                pmu_angles.push(m.value);
            }
            _ => rows.push(i),
        }
    }
    let kinds: Vec<MeasurementKind> = rows.iter().map(|&i| ms.measurements[i].kind).collect();
    let zi = ms.zero_injections.iter().map(|&id| case.require_bus(id)).collect::<Result<Vec<_>>>()?;
    let (b, e) = build_stage1_matrices(case, &kinds, &zi, &layout)?;
    let scale: Vec<f64> = rows.iter().map(|&i| opts.scaling.row_factor(&ms.measurements[i])).collect();
    let mut bm = b.to_dense();
    for (r, s) in scale.iter().enumerate() {
        bm.row_mut(r).scale_mut(*s);
    }
    let z = DVector::from_iterator(rows.len(), rows.iter().zip(&scale).map(|(&i, s)| ms.measurements[i].value * s));
    let thresholds = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&i| opts.lambda * opts.scaling.threshold_factor(&ms.measurements[i])),
    );
    let first = alternate(&bm, &z, &e.to_dense(), &thresholds, opts)?;

    let all_buses: Vec<usize> = (0..case.n_buses()).collect();
    let u_layout = IntermediateLayout::new(case, all_buses.clone(), (0..case.n_branches()).collect(), pmu);
    let u = nonlinear_transform(case, &first.w, &layout, &u_layout, &pmu_angles)?;
    let x_layout = StateLayout::new(case, all_buses);
    let c = build_stage2_matrix(case, &u_layout, &x_layout)?.to_dense();
    let flat = DVector::from_element(c.nrows(), opts.lambda);
    let second = alternate(&c, &u, &DMatrix::zeros(0, c.ncols()), &flat, opts)?;
    let (v, theta) = state_from_x(&second.w, &x_layout);

    Ok(CentralEstimate {
        v,
        theta,
        o_f: first
            .o
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(r, x)| (rows[r], x / scale[r]))
            .collect(),
        o_s: second.o.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(r, x)| (r, *x)).collect(),
        converged: first.converged && second.converged,
        iterations: first.sweeps + second.sweeps,
        removed_measurements: Vec::new(),
        y: Some(first.w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::ieee14;
    use crate::measurement::{true_measurements, MeasurementPlan};

    #[test]
    fn noiseless_recovers_truth() {
        let case = ieee14();
        let ms = true_measurements(&case, &MeasurementPlan::full().kinds(&case)).unwrap();
        let est = centralized_rbse(&case, &ms, &RobustOptions::default()).unwrap();
        assert!(est.converged);
        for i in 0..case.n_buses() {
            assert!((est.v[i] - case.buses[i].v_true).abs() < 1e-8);
            assert!((est.theta[i] - case.buses[i].theta_true).abs() < 1e-8);
        }
        assert!(est.o_f.is_empty() && est.o_s.is_empty());
    }

    #[test]
    fn zero_lambda_rejected() {
        let case = ieee14();
        let ms = true_measurements(&case, &MeasurementPlan::full().kinds(&case)).unwrap();
        let opts = RobustOptions { lambda: 0.0, ..RobustOptions::default() };
        assert!(matches!(centralized_rbse(&case, &ms, &opts), Err(Error::InvalidArgument(_))));
    }
}
