//! Vector layouts for the two linear stages, the nonlinear change of
//! variables between them, and the ℓ1 proximal operator.

mod design;

pub use design::{
    build_stage1_matrices, build_stage2_matrix, measurement_coefficients, ConstraintRow,
    DesignMatrix, UEntry, YVar,
};

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::case::NetworkCase;
use crate::{Error, Result};

/// Dense slot table over bus and branch positions of a case.
#[derive(Debug, Clone, PartialEq)]
struct Slots {
    buses: Vec<usize>,
    branches: Vec<usize>,
    bus_slot: Vec<Option<usize>>,
    branch_slot: Vec<Option<usize>>,
}

impl Slots {
    fn new(case: &NetworkCase, buses: Vec<usize>, branches: Vec<usize>) -> Self {
        let mut bus_slot = vec![None; case.n_buses()];
        for (s, &i) in buses.iter().enumerate() {
            bus_slot[i] = Some(s);
        }
        let mut branch_slot = vec![None; case.n_branches()];
        for (s, &k) in branches.iter().enumerate() {
            branch_slot[k] = Some(buses.len() + 2 * s);
        }
        Slots { buses, branches, bus_slot, branch_slot }
    }

    fn dim(&self) -> usize {
        self.buses.len() + 2 * self.branches.len()
    }
}

/// Positions of `U_i` and `(K_ij, L_ij)` inside a first-stage vector.
/// Buses come first, then one `(K, L)` pair per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneLayout(Slots);

impl StageOneLayout {
    pub fn new(case: &NetworkCase, buses: Vec<usize>, branches: Vec<usize>) -> Self {
        StageOneLayout(Slots::new(case, buses, branches))
    }

    pub fn global(case: &NetworkCase) -> Self {
        Self::new(case, (0..case.n_buses()).collect(), (0..case.n_branches()).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn buses(&self) -> &[usize] {
        &self.0.buses
    }

    pub fn branches(&self) -> &[usize] {
        &self.0.branches
    }

    pub fn u(&self, bus: usize) -> Option<usize> {
        self.0.bus_slot[bus]
    }

    pub fn k(&self, branch: usize) -> Option<usize> {
        self.0.branch_slot[branch]
    }

    pub fn l(&self, branch: usize) -> Option<usize> {
        self.0.branch_slot[branch].map(|p| p + 1)
    }

    pub fn slot(&self, var: YVar) -> Option<usize> {
        match var {
            YVar::U(i) => self.u(i),
            YVar::K(k) => self.k(k),
            YVar::L(k) => self.l(k),
        }
    }
}

/// Positions of `α_i`, `(α_ij, θ_ij)` and optional PMU `θ_i` inside `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateLayout {
    slots: Slots,
    pmu_buses: Vec<usize>,
}

impl IntermediateLayout {
    pub fn new(case: &NetworkCase, buses: Vec<usize>, branches: Vec<usize>, pmu_buses: Vec<usize>) -> Self {
        IntermediateLayout { slots: Slots::new(case, buses, branches), pmu_buses }
    }

    pub fn global(case: &NetworkCase) -> Self {
        Self::new(case, (0..case.n_buses()).collect(), (0..case.n_branches()).collect(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.slots.dim() + self.pmu_buses.len()
    }

    pub fn buses(&self) -> &[usize] {
        &self.slots.buses
    }

    pub fn branches(&self) -> &[usize] {
        &self.slots.branches
    }

    pub fn pmu_buses(&self) -> &[usize] {
        &self.pmu_buses
    }

    pub fn alpha(&self, bus: usize) -> Option<usize> {
        self.slots.bus_slot[bus]
    }

    pub fn alpha_branch(&self, branch: usize) -> Option<usize> {
        self.slots.branch_slot[branch]
    }

    pub fn theta_branch(&self, branch: usize) -> Option<usize> {
        self.slots.branch_slot[branch].map(|p| p + 1)
    }

    pub fn pmu_slot(&self, n: usize) -> usize {
        self.slots.dim() + n
    }

    /// Row descriptors in vector order.
    pub fn entries(&self) -> Vec<UEntry> {
        let mut rows: Vec<UEntry> = self.slots.buses.iter().map(|&i| UEntry::Alpha(i)).collect();
        for &k in &self.slots.branches {
            rows.push(UEntry::AlphaBranch(k));
            rows.push(UEntry::ThetaBranch(k));
        }
        rows.extend(self.pmu_buses.iter().map(|&i| UEntry::ThetaBus(i)));
        rows
    }
}

/// Positions of `α_i` for every bus in scope and `θ_i` for every bus in
/// scope except the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    buses: Vec<usize>,
    alpha_slot: Vec<Option<usize>>,
    theta_slot: Vec<Option<usize>>,
    dim: usize,
}

impl StateLayout {
    pub fn new(case: &NetworkCase, buses: Vec<usize>) -> Self {
        let mut alpha_slot = vec![None; case.n_buses()];
        let mut theta_slot = vec![None; case.n_buses()];
        for (s, &i) in buses.iter().enumerate() {
            alpha_slot[i] = Some(s);
        }
        let mut next = buses.len();
        for &i in &buses {
            if i != case.reference_pos() {
                theta_slot[i] = Some(next);
                next += 1;
            }
        }
        StateLayout { buses, alpha_slot, theta_slot, dim: next }
    }

    pub fn global(case: &NetworkCase) -> Self {
        Self::new(case, (0..case.n_buses()).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    pub fn alpha(&self, bus: usize) -> Option<usize> {
        self.alpha_slot[bus]
    }

    pub fn theta(&self, bus: usize) -> Option<usize> {
        self.theta_slot[bus]
    }

    pub fn contains(&self, bus: usize) -> bool {
        self.alpha_slot[bus].is_some()
    }
}

/// `U_i = V_i²`, `K_ij = V_iV_j cos θ_ij`, `L_ij = V_iV_j sin θ_ij`, with
/// `θ_ij` oriented from → to. `v` and `theta` are indexed by bus position.
pub fn y_from_state(case: &NetworkCase, v: &[f64], theta: &[f64], layout: &StageOneLayout) -> DVector<f64> {
    let mut y = DVector::zeros(layout.dim());
    for &i in layout.buses() {
        y[layout.u(i).unwrap()] = v[i] * v[i];
    }
    for &k in layout.branches() {
        let (f, t) = case.branch_ends(k);
        let (s, c) = (theta[f] - theta[t]).sin_cos();
        let vv = v[f] * v[t];
        let p = layout.k(k).unwrap();
        y[p] = vv * c;
        y[p + 1] = vv * s;
    }
    y
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// `u` evaluated directly from a polar state.
pub fn u_from_state(case: &NetworkCase, v: &[f64], theta: &[f64], layout: &IntermediateLayout) -> DVector<f64> {
    let mut u = DVector::zeros(layout.dim());
    for &i in layout.buses() {
        u[layout.alpha(i).unwrap()] = 2.0 * v[i].ln();
    }
    for &k in layout.branches() {
        let (f, t) = case.branch_ends(k);
        u[layout.alpha_branch(k).unwrap()] = 2.0 * v[f].ln() + 2.0 * v[t].ln();
        u[layout.theta_branch(k).unwrap()] = wrap_angle(theta[f] - theta[t]);
    }
    for (n, &i) in layout.pmu_buses().iter().enumerate() {
        u[layout.pmu_slot(n)] = theta[i];
    }
    u
}

/// Maps a first-stage vector onto the intermediate vector:
/// `α_i = ln U_i`, `α_ij = ln(K² + L²)`, `θ_ij = atan2(L, K)`.
///
/// Every bus and branch of `to` must be present in `from`. PMU slots of `to`
/// are filled from `pmu_angles`, aligned with `to.pmu_buses()`.
pub fn nonlinear_transform(
    case: &NetworkCase,
    y: &DVector<f64>,
    from: &StageOneLayout,
    to: &IntermediateLayout,
    pmu_angles: &[f64],
) -> Result<DVector<f64>> {
    if pmu_angles.len() != to.pmu_buses().len() {
        return Err(Error::InvalidArgument(format!(
            "{} PMU angles for {} PMU slots",
            pmu_angles.len(),
            to.pmu_buses().len()
        )));
    }
    let mut u = DVector::zeros(to.dim());
    for &i in to.buses() {
        let src = from
            .u(i)
            .ok_or_else(|| Error::Construction(format!("U of bus {} not in scope", case.buses[i].id)))?;
        let uu = y[src];
        if !(uu > 0.0) {
            return Err(Error::Domain(format!("U of bus {} is {uu}", case.buses[i].id)));
        }
        u[to.alpha(i).unwrap()] = uu.ln();
    }
    for &k in to.branches() {
        let src = from.k(k).ok_or_else(|| Error::Construction(format!("branch {k} not in scope")))?;
        let (kk, ll) = (y[src], y[src + 1]);
        let mag = kk * kk + ll * ll;
        if !(mag > 0.0) {
            let br = &case.branches[k];
            return Err(Error::Domain(format!("K² + L² vanishes on branch {}-{}", br.from, br.to)));
        }
        u[to.alpha_branch(k).unwrap()] = mag.ln();
        u[to.theta_branch(k).unwrap()] = ll.atan2(kk);
    }
    for (n, &a) in pmu_angles.iter().enumerate() {
        u[to.pmu_slot(n)] = a;
    }
    Ok(u)
}

/// `V_i = exp(α_i / 2)` and `θ_i` for every bus of the layout, in layout
/// order. The reference angle is 0.
pub fn state_from_x(x: &DVector<f64>, layout: &StateLayout) -> (Vec<f64>, Vec<f64>) {
    layout
        .buses()
        .iter()
        .map(|&i| {
            let v = (0.5 * x[layout.alpha(i).unwrap()]).exp();
            let th = layout.theta(i).map_or(0.0, |p| x[p]);
            (v, th)
        })
        .unzip()
}

/// `[ξ]_λ`: shrink toward zero by `λ`, zero inside the dead zone.
pub fn soft_threshold_scalar(xi: f64, lambda: f64) -> f64 {
    if xi > lambda {
        xi - lambda
    } else if xi < -lambda {
        xi + lambda
    } else {
        0.0
    }
}

pub fn soft_threshold(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    v.map(|xi| soft_threshold_scalar(xi, lambda))
}

/// Entry-wise thresholds.
pub fn soft_threshold_each(v: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    v.zip_map(lambda, soft_threshold_scalar)
}
