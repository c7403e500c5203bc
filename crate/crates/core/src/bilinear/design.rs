//! Sparse design matrices of the two linear stages.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{IntermediateLayout, StageOneLayout, StateLayout};
use crate::case::NetworkCase;
use crate::measurement::MeasurementKind;
use crate::{Error, Result};

/// A first-stage variable, by bus or branch position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum YVar {
    U(usize),
    K(usize),
    L(usize),
}

/// One zero-injection equality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintRow {
    pub bus: usize,
    pub reactive: bool,
}

/// One entry of the intermediate vector `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UEntry {
    Alpha(usize),
    AlphaBranch(usize),
    ThetaBranch(usize),
    ThetaBus(usize),
}

/// Sparse matrix as coefficient triples, with one descriptor per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<R> {
    pub rows: Vec<R>,
    pub ncols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl<R> DesignMatrix<R> {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for &(r, c, v) in &self.triplets {
            m[(r, c)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows());
        for &(r, c, v) in &self.triplets {
            out[r] += v * x[c];
        }
        out
    }

    /// `self · m` without densifying `self`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), m.ncols());
        for &(r, c, v) in &self.triplets {
            for j in 0..m.ncols() {
                out[(r, j)] += v * m[(c, j)];
            }
        }
        out
    }

    /// Coefficients of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> Vec<(usize, f64)> {
        self.triplets.iter().filter(|t| t.0 == r).map(|t| (t.1, t.2)).collect()
    }
}

/// Linear coefficients of a conventional measurement in the first-stage
/// variables, with the tap ratio folded in. Flow terms exclude shunts, which
/// enter bus injections once.
pub fn measurement_coefficients(case: &NetworkCase, kind: &MeasurementKind) -> Result<Vec<(YVar, f64)>> {
    kind.validate(case)?;
    let mut acc: BTreeMap<YVar, f64> = BTreeMap::new();
    let mut add = |var, c: f64| *acc.entry(var).or_insert(0.0) += c;
    match *kind {
        MeasurementKind::PFlow { branch, .. } => from_end(case, branch, false, &mut add),
        MeasurementKind::QFlow { branch, .. } => from_end(case, branch, true, &mut add),
        MeasurementKind::VSquared { bus } => add(YVar::U(case.require_bus(bus)?), 1.0),
        MeasurementKind::PInjection { bus } | MeasurementKind::QInjection { bus } => {
            let reactive = matches!(kind, MeasurementKind::QInjection { .. });
            injection(case, case.require_bus(bus)?, reactive, &mut add);
        }
        MeasurementKind::PmuAngle { bus } => {
            return Err(Error::Construction(format!(
                "PMU angle at bus {bus} is not linear in the first-stage vector"
            )))
        }
    }
    Ok(acc.into_iter().filter(|(_, c)| *c != 0.0).collect())
}

fn from_end(case: &NetworkCase, k: usize, reactive: bool, add: &mut impl FnMut(YVar, f64)) {
    let br = &case.branches[k];
    let (f, _) = case.branch_ends(k);
    let (g, b, t) = (br.g, br.b, br.tap);
    if reactive {
        add(YVar::U(f), -b / (t * t));
        add(YVar::K(k), b / t);
        add(YVar::L(k), -g / t);
    } else {
        add(YVar::U(f), g / (t * t));
        add(YVar::K(k), -g / t);
        add(YVar::L(k), -b / t);
    }
}

fn to_end(case: &NetworkCase, k: usize, reactive: bool, add: &mut impl FnMut(YVar, f64)) {
    let br = &case.branches[k];
    let (_, to) = case.branch_ends(k);
    let (g, b, t) = (br.g, br.b, br.tap);
    if reactive {
        add(YVar::U(to), -b);
        add(YVar::K(k), b / t);
        add(YVar::L(k), g / t);
    } else {
        add(YVar::U(to), g);
        add(YVar::K(k), -g / t);
        add(YVar::L(k), b / t);
    }
}

fn injection(case: &NetworkCase, bus: usize, reactive: bool, add: &mut impl FnMut(YVar, f64)) {
    let sh = &case.buses[bus];
    add(YVar::U(bus), if reactive { -sh.b_sh } else { sh.g_sh });
    for k in 0..case.n_branches() {
        let (f, t) = case.branch_ends(k);
        if f == bus {
            from_end(case, k, reactive, add);
        } else if t == bus {
            to_end(case, k, reactive, add);
        }
    }
}

fn place<R>(
    case: &NetworkCase,
    rows: Vec<R>,
    coeffs: Vec<Vec<(YVar, f64)>>,
    layout: &StageOneLayout,
) -> Result<DesignMatrix<R>> {
    let mut triplets = Vec::new();
    for (r, row) in coeffs.into_iter().enumerate() {
        for (var, c) in row {
            let col = layout.slot(var).ok_or_else(|| {
                Error::Construction(format!("row {r} references {} outside the layout", describe(case, var)))
            })?;
            triplets.push((r, col, c));
        }
    }
    Ok(DesignMatrix { rows, ncols: layout.dim(), triplets })
}

fn describe(case: &NetworkCase, var: YVar) -> String {
    match var {
        YVar::U(i) => format!("U of bus {}", case.buses[i].id),
        YVar::K(k) | YVar::L(k) => {
            let br = &case.branches[k];
            format!("K/L of branch {}-{}", br.from, br.to)
        }
    }
}

/// `B` over `kinds` and `E` over the P and Q injections of `zero_injection`
/// bus positions, both expressed in `layout`.
pub fn build_stage1_matrices(
    case: &NetworkCase,
    kinds: &[MeasurementKind],
    zero_injection: &[usize],
    layout: &StageOneLayout,
) -> Result<(DesignMatrix<MeasurementKind>, DesignMatrix<ConstraintRow>)> {
    let b_coeffs = kinds
        .iter()
        .map(|k| measurement_coefficients(case, k))
        .collect::<Result<Vec<_>>>()?;
    let b = place(case, kinds.to_vec(), b_coeffs, layout)?;

    let mut e_rows = Vec::new();
    let mut e_coeffs = Vec::new();
    for &bus in zero_injection {
        for reactive in [false, true] {
            let mut acc: BTreeMap<YVar, f64> = BTreeMap::new();
            injection(case, bus, reactive, &mut |v, c| *acc.entry(v).or_insert(0.0) += c);
            e_rows.push(ConstraintRow { bus, reactive });
            e_coeffs.push(acc.into_iter().filter(|(_, c)| *c != 0.0).collect());
        }
    }
    let e = place(case, e_rows, e_coeffs, layout)?;
    Ok((b, e))
}

/// `C` mapping a state layout onto an intermediate layout:
/// `α_i ← α_i`, `α_ij ← α_i + α_j`, `θ_ij ← θ_i − θ_j`, PMU `θ_i ← θ_i`.
/// The reference angle has no column.
pub fn build_stage2_matrix(
    case: &NetworkCase,
    u_layout: &IntermediateLayout,
    x_layout: &StateLayout,
) -> Result<DesignMatrix<UEntry>> {
    let alpha = |i: usize| {
        x_layout
            .alpha(i)
            .ok_or_else(|| Error::Construction(format!("bus {} outside the state scope", case.buses[i].id)))
    };
    let theta = |i: usize| -> Result<Option<usize>> {
        alpha(i)?;
        Ok(x_layout.theta(i))
    };
    let rows = u_layout.entries();
    let mut triplets = Vec::new();
    for (r, entry) in rows.iter().enumerate() {
        match *entry {
            UEntry::Alpha(i) => triplets.push((r, alpha(i)?, 1.0)),
            UEntry::AlphaBranch(k) => {
                let (f, t) = case.branch_ends(k);
                triplets.push((r, alpha(f)?, 1.0));
                triplets.push((r, alpha(t)?, 1.0));
            }
            UEntry::ThetaBranch(k) => {
                let (f, t) = case.branch_ends(k);
                if let Some(c) = theta(f)? {
                    triplets.push((r, c, 1.0));
                }
                if let Some(c) = theta(t)? {
                    triplets.push((r, c, -1.0));
                }
            }
            UEntry::ThetaBus(i) => match theta(i)? {
                Some(c) => triplets.push((r, c, 1.0)),
                None => {
                    return Err(Error::Construction("PMU angle row at the reference bus".into()));
                }
            },
        }
    }
    Ok(DesignMatrix { rows, ncols: x_layout.dim(), triplets })
}
