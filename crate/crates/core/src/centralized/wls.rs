use nalgebra::{DMatrix, DVector};

use super::CentralEstimate;
use crate::bilinear::{build_stage1_matrices, y_from_state, ConstraintRow, DesignMatrix, StageOneLayout, StateLayout};
use crate::case::NetworkCase;
use crate::linalg::Kkt;
use crate::measurement::{MeasurementKind, MeasurementSet};
use crate::{Error, Result};

pub const DEFAULT_LNRT_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub max_iter: usize,
    /// Converged when `‖Δx‖∞` drops below this.
    pub tol: f64,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions { max_iter: 50, tol: 1e-10 }
    }
}

/// Measurement model `h(x) = B y(x)` (plus PMU rows) with its Jacobian over
/// `x = (V, θ without the reference)`.
struct Model {
    layout: StageOneLayout,
    x_layout: StateLayout,
    b: DesignMatrix<MeasurementKind>,
    e: DesignMatrix<ConstraintRow>,
    /// `(row, bus)` of PMU angle rows.
    pmu: Vec<(usize, usize)>,
    power_rows: Vec<usize>,
}

impl Model {
    fn new(case: &NetworkCase, ms: &MeasurementSet, active: &[usize]) -> Result<Self> {
        let layout = StageOneLayout::global(case);
        let x_layout = StateLayout::global(case);
        let mut kinds = Vec::new();
        let mut power_rows = Vec::new();
        let mut pmu = Vec::new();
        for (r, &i) in active.iter().enumerate() {
            match ms.measurements[i].kind {
                MeasurementKind::PmuAngle { bus } => pmu.push((r, case.require_bus(bus)?)),
                k => {
                    kinds.push(k);
                    power_rows.push(r);
                }
            }
        }
        let zi = ms.zero_injections.iter().map(|&id| case.require_bus(id)).collect::<Result<Vec<_>>>()?;
        let (b, e) = build_stage1_matrices(case, &kinds, &zi, &layout)?;
        Ok(Model { layout, x_layout, b, e, pmu, power_rows })
    }

    fn split(&self, case: &NetworkCase, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let v = (0..case.n_buses()).map(|i| x[self.x_layout.alpha(i).unwrap()]).collect();
        let th = (0..case.n_buses()).map(|i| self.x_layout.theta(i).map_or(0.0, |p| x[p])).collect();
        (v, th)
    }

    /// `∂y/∂x` at `(v, θ)`.
    fn dy_dx(&self, case: &NetworkCase, v: &[f64], th: &[f64]) -> DMatrix<f64> {
        let (l, xl) = (&self.layout, &self.x_layout);
        let mut j = DMatrix::zeros(l.dim(), xl.dim());
        for i in 0..case.n_buses() {
            j[(l.u(i).unwrap(), xl.alpha(i).unwrap())] = 2.0 * v[i];
        }
        for k in 0..case.n_branches() {
            let (f, t) = case.branch_ends(k);
            let (s, c) = (th[f] - th[t]).sin_cos();
            let (pk, pl) = (l.k(k).unwrap(), l.l(k).unwrap());
            let (kk, ll) = (v[f] * v[t] * c, v[f] * v[t] * s);
            j[(pk, xl.alpha(f).unwrap())] = v[t] * c;
            j[(pk, xl.alpha(t).unwrap())] = v[f] * c;
            j[(pl, xl.alpha(f).unwrap())] = v[t] * s;
            j[(pl, xl.alpha(t).unwrap())] = v[f] * s;
            if let Some(p) = xl.theta(f) {
                j[(pk, p)] = -ll;
                j[(pl, p)] = kk;
            }
            if let Some(p) = xl.theta(t) {
                j[(pk, p)] = ll;
                j[(pl, p)] = -kk;
            }
        }
        j
    }

    /// `h(x)`, `H`, `c(x)` and its Jacobian.
    fn eval(
        &self,
        case: &NetworkCase,
        x: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (v, th) = self.split(case, x);
        let y = y_from_state(case, &v, &th, &self.layout);
        let dy = self.dy_dx(case, &v, &th);
        let n = self.power_rows.len() + self.pmu.len();
        let mut h = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, x.len());
        let by = self.b.mul_vec(&y);
        let bj = self.b.mul_dense(&dy);
        for (src, &r) in self.power_rows.iter().enumerate() {
            h[r] = by[src];
            jac.row_mut(r).copy_from(&bj.row(src));
        }
        for &(r, i) in &self.pmu {
            h[r] = th[i];
            jac[(r, self.x_layout.theta(i).expect("PMU away from the reference"))] = 1.0;
        }
        (h, jac, self.e.mul_vec(&y), self.e.mul_dense(&dy))
    }
}

/// Nonzero `(column, value)` pairs of every row; Jacobian rows touch only a
/// handful of states.
fn row_nonzeros(m: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).filter(|&c| m[(r, c)] != 0.0).map(|c| (c, m[(r, c)])).collect())
        .collect()
}

const MAX_BACKTRACKS: usize = 30;

/// `½ Σ w_r (z_r − h_r)²` plus a heavy ℓ1 penalty on the zero-injection
/// residuals.
fn merit(weights: &DVector<f64>, z: &DVector<f64>, h: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let r = z - h;
    0.5 * weights.dot(&r.component_mul(&r)) + 1e3 * weights.max() * c.abs().sum()
}

struct WlsSolution {
    estimate: CentralEstimate,
    /// Final Jacobian, residuals and weights of the active rows.
    jac: DMatrix<f64>,
    x: DVector<f64>,
    residual: DVector<f64>,
    weights: DVector<f64>,
    kkt: Kkt,
}

/// Gauss-Newton from `start`, or from a flat start.
fn solve_wls(
    case: &NetworkCase,
    ms: &MeasurementSet,
    active: &[usize],
    start: Option<&DVector<f64>>,
    opts: &WlsOptions,
) -> Result<WlsSolution> {
    let model = Model::new(case, ms, active)?;
    let z = DVector::from_iterator(active.len(), active.iter().map(|&i| ms.measurements[i].value));
    let weights = DVector::from_iterator(active.len(), active.iter().map(|&i| ms.measurements[i].model_sigma().powi(-2)));
    let mut x = match start {
        Some(x) => x.clone(),
        None => {
            let mut x = DVector::zeros(model.x_layout.dim());
            for i in 0..case.n_buses() {
                x[model.x_layout.alpha(i).unwrap()] = 1.0;
            }
            x
        }
    };
    let mut converged = false;
    let mut iterations = 0;
    let (mut h, mut jac, mut c, mut cj) = model.eval(case, &x);
    let mut kkt;
    loop {
        let rows = row_nonzeros(&jac);
        let mut gain = DMatrix::zeros(jac.ncols(), jac.ncols());
        for (r, nz) in rows.iter().enumerate() {
            for &(a, va) in nz {
                for &(b, vb) in nz {
                    gain[(a, b)] += weights[r] * va * vb;
                }
            }
        }
        kkt = Kkt::new(&gain, &cj)?;
        if converged || iterations == opts.max_iter {
            break;
        }
        iterations += 1;
        let mut g = DVector::zeros(jac.ncols());
        for (r, nz) in rows.iter().enumerate() {
            for &(a, va) in nz {
                g[a] += weights[r] * va * (z[r] - h[r]);
            }
        }
        let dx = kkt.solve(&g, &(-&c));
        if !dx.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("Gauss-Newton diverged".into()));
        }
        // Halve the step until the merit does not rise; full steps can cycle
        // on weakly observable networks.
        let current = merit(&weights, &z, &h, &c);
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &dx * step;
            let eval = model.eval(case, &trial);
            if merit(&weights, &z, &eval.0, &eval.2) <= current || step < 1e-6 {
                x = trial;
                (h, jac, c, cj) = eval;
                break;
            }
            step *= 0.5;
        }
        converged = dx.amax() * step < opts.tol;
    }
    let (v, theta) = model.split(case, &x);
    Ok(WlsSolution {
        estimate: CentralEstimate {
            v,
            theta,
            o_f: Vec::new(),
            o_s: Vec::new(),
            converged,
            iterations,
            removed_measurements: Vec::new(),
            y: None,
        },
        x,
        residual: &z - &h,
        jac,
        weights,
        kkt,
    })
}

/// Classical weighted least squares from a flat start, with zero-injection
/// equalities enforced through the augmented normal equations.
pub fn gauss_newton_wls(case: &NetworkCase, ms: &MeasurementSet, opts: &WlsOptions) -> Result<CentralEstimate> {
    let active: Vec<usize> = (0..ms.len()).collect();
    Ok(solve_wls(case, ms, &active, None, opts)?.estimate)
}

/// WLS with repeated removal of the measurement with the largest normalized
/// residual above `threshold`.
pub fn wls_lnrt(
    case: &NetworkCase,
    ms: &MeasurementSet,
    threshold: f64,
    opts: &WlsOptions,
) -> Result<CentralEstimate> {
    let mut active: Vec<usize> = (0..ms.len()).collect();
    let mut removed: Vec<usize> = Vec::new();
    // Each re-solve starts from the previous estimate.
    let mut start: Option<DVector<f64>> = None;
    loop {
        let sol = solve_wls(case, ms, &active, start.as_ref(), opts).map_err(|e| match (e, removed.last()) {
            (Error::Observability(msg), Some(&last)) => Error::Observability(format!(
                "{msg} after removing {}",
                ms.measurements[last].kind.label()
            )),
            (e, _) => e,
        })?;
        // Ω = R − H S Hᵀ, with S the state block of the inverse KKT matrix.
        let s = sol.kkt.primal_inverse();
        let rows = row_nonzeros(&sol.jac);
        let mut worst: Option<(usize, f64)> = None;
        for (r, nz) in rows.iter().enumerate() {
            let var = 1.0 / sol.weights[r];
            let omega = var - nz.iter().map(|&(a, va)| nz.iter().map(|&(b, vb)| va * s[(a, b)] * vb).sum::<f64>()).sum::<f64>();
            // Critical measurements have no residual redundancy.
            if omega <= 1e-10 * var {
                continue;
            }
            let rn = sol.residual[r].abs() / omega.sqrt();
            if rn > threshold && worst.is_none_or(|(_, w)| rn > w) {
                worst = Some((r, rn));
            }
        }
        match worst {
            None => {
                let mut est = sol.estimate;
                est.removed_measurements = removed;
                return Ok(est);
            }
            Some((r, _)) => {
                removed.push(active.remove(r));
                start = Some(sol.x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::ieee14;
    use crate::measurement::{true_measurements, MeasurementPlan};

    #[test]
    fn noiseless_wls_is_exact() {
        let case = ieee14();
        let ms = true_measurements(&case, &MeasurementPlan::full().kinds(&case)).unwrap();
        let est = gauss_newton_wls(&case, &ms, &WlsOptions::default()).unwrap();
        assert!(est.converged);
        for i in 0..case.n_buses() {
            assert!((est.v[i] - case.buses[i].v_true).abs() < 1e-8);
            assert!((est.theta[i] - case.buses[i].theta_true).abs() < 1e-8);
        }
    }

    #[test]
    fn clean_data_removes_nothing() {
        let case = ieee14();
        let ms = true_measurements(&case, &MeasurementPlan::full().kinds(&case)).unwrap();
        let est = wls_lnrt(&case, &ms, DEFAULT_LNRT_THRESHOLD, &WlsOptions::default()).unwrap();
        assert!(est.removed_measurements.is_empty());
    }
}
