use nalgebra::DMatrix;

use super::NetworkCase;

/// Node-branch incidence of a case.
#[derive(Debug, Clone)]
pub struct Incidence {
    /// `N × b`, `+1` at the from-bus row and `-1` at the to-bus row.
    pub full: DMatrix<f64>,
    /// `full` with the reference-bus row removed.
    pub reduced: DMatrix<f64>,
}

impl Incidence {
    /// `|A|`, which maps bus `α` onto branch `α_ij = α_i + α_j`.
    pub fn absolute(&self) -> DMatrix<f64> {
        self.full.abs()
    }
}

pub fn incidence_matrices(case: &NetworkCase) -> Incidence {
    let mut full = DMatrix::zeros(case.n_buses(), case.n_branches());
    for k in 0..case.n_branches() {
        let (f, t) = case.branch_ends(k);
        full[(f, k)] = 1.0;
        full[(t, k)] = -1.0;
    }
    let reduced = full.clone().remove_row(case.reference_pos());
    Incidence { full, reduced }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::{ieee14, two_bus};
    use crate::case::{Branch, Bus};
    use nalgebra::DVector;

    #[test]
    fn two_bus_orientation() {
        let inc = incidence_matrices(&two_bus(1.0, -10.0, 0.0));
        assert_eq!(inc.full, DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        assert_eq!(inc.reduced.nrows(), 1);
    }

    #[test]
    fn path_columns_have_one_plus_one_minus() {
        let bus = |id| Bus { id, g_sh: 0.0, b_sh: 0.0, is_zero_injection: false, v_true: 1.0, theta_true: 0.0 };
        let case = NetworkCase::new(
            100.0,
            1,
            vec![bus(1), bus(2), bus(3)],
            vec![
                Branch { from: 1, to: 2, g: 1.0, b: -5.0, tap: 1.0 },
                Branch { from: 2, to: 3, g: 1.0, b: -5.0, tap: 1.0 },
            ],
        )
        .unwrap();
        let inc = incidence_matrices(&case);
        for col in inc.full.column_iter() {
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == -1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 1);
        }
    }

    #[test]
    fn reduced_incidence_gives_angle_differences() {
        let case = ieee14();
        let inc = incidence_matrices(&case);
        assert_eq!(inc.reduced.nrows(), 13);
        let theta = DVector::from_iterator(
            13,
            (1..14).map(|i| case.buses[i].theta_true),
        );
        let diff = inc.reduced.transpose() * theta;
        for k in 0..case.n_branches() {
            let (f, t) = case.branch_ends(k);
            let expect = case.buses[f].theta_true - case.buses[t].theta_true;
            assert!((diff[k] - expect).abs() < 1e-15);
        }
        let alpha = DVector::from_fn(14, |i, _| 2.0 * case.buses[i].v_true.ln());
        let sums = inc.absolute().transpose() * alpha.clone();
        for k in 0..case.n_branches() {
            let (f, t) = case.branch_ends(k);
            assert!((sums[k] - alpha[f] - alpha[t]).abs() < 1e-15);
        }
    }
}
