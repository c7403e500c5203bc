//! Per-area consensus problem shared by both stages:
//! `min ½‖z − M w − o‖² + λ‖o‖₁  s.t.  E w = z_e`, with some entries of `w`
//! coupled to copies held by other areas.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{Augmentation, Residuals};
use crate::bilinear::soft_threshold_each;
use crate::linalg::ConstrainedRidge;
use crate::{Error, Result};

/// One coupled element: up to two components of `w` and the other areas
/// holding a copy.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SharedSlot {
    pub key: usize,
    pub slots: [Option<usize>; 2],
    pub peers: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct LocalProblem {
    pub area: usize,
    pub m: DMatrix<f64>,
    pub z: DVector<f64>,
    pub e: DMatrix<f64>,
    pub z_e: DVector<f64>,
    /// Per-row `λ`.
    pub thresholds: DVector<f64>,
    damping: DVector<f64>,
    solver: ConstrainedRidge,
    pub shared: Vec<SharedSlot>,
    pub w: DVector<f64>,
    pub o: DVector<f64>,
    pub w_hat: DVector<f64>,
    pub bar_prev: Vec<[f64; 2]>,
    prev_w: DVector<f64>,
    pub inner_sweeps: usize,
}

/// Inner alternations stop once neither block moves more than this.
const INNER_TOL: f64 = 1e-12;
/// Sweeps between direct solves on the current outlier support.
const SUPPORT_STEP_EVERY: usize = 3;
const MAX_BACKTRACKS: usize = 20;

impl LocalProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        area: usize,
        m: DMatrix<f64>,
        z: DVector<f64>,
        e: DMatrix<f64>,
        rho: f64,
        thresholds: DVector<f64>,
        augmentation: Augmentation,
        shared: Vec<SharedSlot>,
        start: DVector<f64>,
    ) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("ρ = {rho} must be positive")));
        }
        if thresholds.len() != m.nrows() || !thresholds.iter().all(|l| *l > 0.0) {
            return Err(Error::InvalidArgument("every row needs a positive threshold".into()));
        }
        let n = m.ncols();
        let damping = match augmentation {
            Augmentation::Identity => DVector::from_element(n, rho),
            Augmentation::SharedOnly => {
                let mut d = DVector::zeros(n);
                for s in shared.iter().flat_map(|s| s.slots.iter().flatten()) {
                    d[*s] = rho;
                }
                d
            }
        };
        let solver = ConstrainedRidge::new(&m, &e, &damping).map_err(|err| match err {
            Error::Numerical(msg) => Error::Numerical(format!("area {area}: {msg}")),
            other => other,
        })?;
        let mut w_hat = DVector::zeros(n);
        let bar_prev = shared
            .iter()
            .map(|s| {
                let mut bar = [0.0; 2];
                for (c, slot) in s.slots.iter().enumerate() {
                    if let Some(p) = slot {
                        w_hat[*p] = start[*p];
                        bar[c] = start[*p];
                    }
                }
                bar
            })
            .collect();
        let z_e = DVector::zeros(e.nrows());
        Ok(LocalProblem {
            area,
            o: DVector::zeros(m.nrows()),
            m,
            z,
            e,
            z_e,
            thresholds,
            damping,
            solver,
            shared,
            prev_w: start.clone(),
            w: start,
            w_hat,
            bar_prev,
            inner_sweeps: 1,
        })
    }

    /// Minimizes the local augmented problem for the current `ŵ`,
    /// warm-started from the previous round. Plain `w`/`o` alternations
    /// converge slowly when thresholded rows carry high leverage, so every
    /// few sweeps the minimizer for the current outlier support is solved
    /// directly and approached with a backtracking line search.
    pub fn update(&mut self) {
        let anchor = self.damping.component_mul(&self.w_hat);
        self.prev_w = self.w.clone();
        for sweep in 0..self.inner_sweeps.max(1) {
            let q = self.m.tr_mul(&(&self.z - &self.o)) + &anchor;
            let w = self.solver.solve(&q, &self.z_e);
            let o = soft_threshold_each(&(&self.z - &self.m * &w), &self.thresholds);
            let change = (&w - &self.w).amax().max((&o - &self.o).amax());
            self.w = w;
            self.o = o;
            if change < INNER_TOL {
                break;
            }
            if sweep % SUPPORT_STEP_EVERY == SUPPORT_STEP_EVERY - 1 {
                if let Some(target) = self.support_minimizer(&anchor) {
                    self.line_search(&target);
                }
            }
        }
    }

    /// Backtracks from the current `w` toward `target` and keeps the first
    /// point that lowers the objective. Both ends satisfy `E w = z_e`, so
    /// every point on the segment does too.
    fn line_search(&mut self, target: &DVector<f64>) {
        let current = self.augmented_objective(&self.w, &self.o);
        let dir = target - &self.w;
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let w = &self.w + &dir * step;
            let o = soft_threshold_each(&(&self.z - &self.m * &w), &self.thresholds);
            if self.augmented_objective(&w, &o) < current {
                self.w = w;
                self.o = o;
                return;
            }
            step *= 0.5;
        }
    }

    /// `½‖z − M w − o‖² + Σ λ_i |o_i| + ½ (w − ŵ)ᵀ D (w − ŵ)`.
    fn augmented_objective(&self, w: &DVector<f64>, o: &DVector<f64>) -> f64 {
        let r = &self.z - &self.m * w - o;
        let d = w - &self.w_hat;
        0.5 * r.norm_squared() + self.thresholds.dot(&o.abs()) + 0.5 * self.damping.dot(&d.component_mul(&d))
    }

    /// Exact minimizer over `w` when the support and signs of `o` are held
    /// fixed. Thresholded rows then enter linearly, which downdates the gain
    /// by `M_Sᵀ M_S`; the downdate is applied through a `|S| × |S|` system.
    fn support_minimizer(&self, anchor: &DVector<f64>) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..self.o.len()).filter(|&i| self.o[i] != 0.0).collect();
        if support.is_empty() {
            return None;
        }
        let n = self.m.ncols();
        let k = support.len();
        let rows = DMatrix::from_fn(k, n, |r, c| self.m[(support[r], c)]);
        // Rows in S contribute λ_i sign(o_i) instead of z_i.
        let mut zs = self.z.clone();
        for &i in &support {
            zs[i] = 0.0;
        }
        let lin = DVector::from_iterator(k, support.iter().map(|&i| self.thresholds[i] * self.o[i].signum()));
        let q = self.m.tr_mul(&zs) + rows.tr_mul(&lin) + anchor;
        let w0 = self.solver.solve(&q, &self.z_e);
        let zero = DVector::zeros(self.z_e.len());
        let mut basis = DMatrix::zeros(n, k);
        for r in 0..k {
            basis.set_column(r, &self.solver.solve(&rows.row(r).transpose(), &zero));
        }
        let system = DMatrix::identity(k, k) - &rows * &basis;
        let t = system.lu().solve(&(&rows * &w0))?;
        let w = w0 + basis * t;
        w.iter().all(|v| v.is_finite()).then_some(w)
    }

    /// `z − M w`.
    pub fn residual(&self) -> DVector<f64> {
        &self.z - &self.m * &self.w
    }

    pub fn objective(&self) -> f64 {
        let r = self.residual() - &self.o;
        0.5 * r.norm_squared() + self.thresholds.dot(&self.o.abs())
    }

    pub fn constraint_violation(&self) -> f64 {
        if self.e.nrows() == 0 {
            return 0.0;
        }
        (&self.e * &self.w - &self.z_e).amax()
    }

    /// Last change of the local iterate, `‖w^{t+1} − w^t‖∞`.
    pub fn drift(&self) -> f64 {
        (&self.w - &self.prev_w).amax()
    }

    pub fn component(&self, slot: Option<usize>) -> f64 {
        slot.map_or(0.0, |p| self.w[p])
    }

    /// Current values of every shared element held jointly with `peer`.
    pub fn values_for(&self, peer: usize) -> Vec<(usize, [f64; 2])> {
        self.shared
            .iter()
            .filter(|s| s.peers.contains(&peer))
            .map(|s| (s.key, [self.component(s.slots[0]), self.component(s.slots[1])]))
            .collect()
    }

    /// Averages every shared element over all copies, advances `ŵ`, and
    /// returns this area's residual contributions. `received` maps a key to
    /// `(sender, value)` pairs.
    pub fn consensus(&mut self, received: &BTreeMap<usize, Vec<(usize, [f64; 2])>>) -> Result<Residuals> {
        let mut res = Residuals { drift: self.drift(), ..Residuals::default() };
        for (n, s) in self.shared.iter().enumerate() {
            let copies = received.get(&s.key).map_or(&[][..], Vec::as_slice);
            for peer in &s.peers {
                if !copies.iter().any(|(from, _)| from == peer) {
                    return Err(Error::Protocol(format!(
                        "area {} missing the copy of element {} from area {peer}",
                        self.area, s.key
                    )));
                }
            }
            let own = [self.component(s.slots[0]), self.component(s.slots[1])];
            // Sum in area order so every holder computes a bit-identical mean.
            let mut all: Vec<(usize, [f64; 2])> =
                copies.iter().filter(|(from, _)| s.peers.contains(from)).copied().collect();
            all.push((self.area, own));
            all.sort_by_key(|(a, _)| *a);
            let count = all.len() as f64;
            for c in 0..2 {
                let Some(p) = s.slots[c] else { continue };
                let bar = all.iter().map(|(_, v)| v[c]).sum::<f64>() / count;
                let prev = self.bar_prev[n][c];
                res.primal = res.primal.max((own[c] - bar).abs());
                res.dual = res.dual.max((bar - prev).abs());
                self.w_hat[p] += 2.0 * bar - prev - own[c];
                self.bar_prev[n][c] = bar;
            }
        }
        Ok(res)
    }
}
