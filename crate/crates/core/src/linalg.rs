use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::{Error, Result};

/// Solver for `min ½‖B y − r‖² + ½ (y − ŷ)ᵀ D (y − ŷ)  s.t.  E y = z_e`
/// with `D = diag(d)`, factorized once.
///
/// With `G = BᵀB + D` and `B̂ = (E G⁻¹ Eᵀ)⁻¹ E G⁻¹`, the minimizer is
/// `y = G⁻¹ (I − Eᵀ B̂) q + B̂ᵀ z_e` where `q = Bᵀ r + D ŷ`.
#[derive(Debug, Clone)]
pub(crate) struct ConstrainedRidge {
    gain: Cholesky<f64, Dyn>,
    e: DMatrix<f64>,
    /// `B̂`, `m × n`; empty when there are no constraints.
    b_hat: DMatrix<f64>,
}

impl ConstrainedRidge {
    pub fn new(b: &DMatrix<f64>, e: &DMatrix<f64>, damping: &DVector<f64>) -> Result<Self> {
        let mut g = b.tr_mul(b);
        for (i, d) in damping.iter().enumerate() {
            g[(i, i)] += d;
        }
        let gain = Cholesky::new(g)
            .ok_or_else(|| Error::Numerical("augmented gain matrix is not positive definite".into()))?;
        let b_hat = if e.nrows() == 0 {
            DMatrix::zeros(0, b.ncols())
        } else {
            let ginv_et = gain.solve(&e.transpose());
            let schur = Cholesky::new(e * &ginv_et).ok_or_else(|| {
                Error::Numerical("equality constraints are dependent under the gain matrix".into())
            })?;
            schur.solve(&ginv_et.transpose())
        };
        Ok(ConstrainedRidge { gain, e: e.clone(), b_hat })
    }

    /// Minimizer for the linear term `q` and constraint right-hand side `z_e`.
    pub fn solve(&self, q: &DVector<f64>, z_e: &DVector<f64>) -> DVector<f64> {
        if self.b_hat.nrows() == 0 {
            return self.gain.solve(q);
        }
        let projected = q - self.e.tr_mul(&(&self.b_hat * q));
        let mut y = self.gain.solve(&projected);
        y += self.b_hat.tr_mul(z_e);
        y
    }
}

/// Dense LU of a symmetric indefinite KKT matrix `[[H, Cᵀ], [C, 0]]`.
/// The constraint block is scaled to the magnitude of `H` so that the pivot
/// test below is not fooled by weights like `1/σ²`.
#[derive(Debug, Clone)]
pub(crate) struct Kkt {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
    gamma: f64,
}

impl Kkt {
    pub fn new(h: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        let m = c.nrows();
        let gamma = if m > 0 && c.amax() > 0.0 && h.amax() > 0.0 { h.amax() / c.amax() } else { 1.0 };
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(h);
        if m > 0 {
            let scaled = c * gamma;
            k.view_mut((0, n), (n, m)).copy_from(&scaled.transpose());
            k.view_mut((n, 0), (m, n)).copy_from(&scaled);
        }
        let lu = LU::new(k);
        if !lu.is_invertible() {
            return Err(Error::Observability("KKT matrix is singular".into()));
        }
        let kkt = Kkt { lu, n, gamma };
        let probe = kkt.lu.u().diagonal().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
        if probe.0 <= probe.1 * 1e-13 {
            return Err(Error::Observability("KKT matrix is numerically singular".into()));
        }
        Ok(kkt)
    }

    /// Returns the primal part of the solution of `K [x; μ] = [g; h]`.
    pub fn solve(&self, g: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.n + h.len());
        rhs.rows_mut(0, self.n).copy_from(g);
        rhs.rows_mut(self.n, h.len()).copy_from(&(h * self.gamma));
        let sol = self.lu.solve(&rhs).expect("invertible KKT");
        sol.rows(0, self.n).into_owned()
    }

    /// Top-left `n × n` block of the inverse.
    pub fn primal_inverse(&self) -> DMatrix<f64> {
        let total = self.lu.l().nrows();
        let mut rhs = DMatrix::zeros(total, self.n);
        for i in 0..self.n {
            rhs[(i, i)] = 1.0;
        }
        let sol = self.lu.solve(&rhs).expect("invertible KKT");
        sol.view((0, 0), (self.n, self.n)).into_owned()
    }
}
