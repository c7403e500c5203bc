//! Algebraic identities of the bilinear chain on random operating points.

use nalgebra::DVector;
use proptest::prelude::*;

use drbse::bilinear::{
    build_stage1_matrices, build_stage2_matrix, nonlinear_transform, u_from_state, wrap_angle, y_from_state,
    IntermediateLayout, StageOneLayout, StateLayout,
};
use drbse::case::{incidence_matrices, load_case_json};
use drbse::measurement::{evaluate_ac, MeasurementKind, MeasurementPlan};
use drbse::{soft_threshold_scalar, NetworkCase};

fn ieee14() -> NetworkCase {
    load_case_json(include_str!("../../../cases/ieee14.json")).unwrap()
}

/// Magnitudes in [0.9, 1.1] and angles within ±0.6 rad, reference at 0.
fn state(case: &NetworkCase) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let n = case.n_buses();
    let r = case.reference_pos();
    (prop::collection::vec(0.9..1.1f64, n), prop::collection::vec(-0.6..0.6f64, n)).prop_map(move |(v, mut t)| {
        t[r] = 0.0;
        (v, t)
    })
}

fn x_from_state(layout: &StateLayout, v: &[f64], theta: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(layout.dim());
    for &i in layout.buses() {
        x[layout.alpha(i).unwrap()] = 2.0 * v[i].ln();
        if let Some(p) = layout.theta(i) {
            x[p] = theta[i];
        }
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn soft_threshold_is_nonexpansive_with_dead_zone(a in -10.0..10.0f64, b in -10.0..10.0f64, lambda in 0.0..5.0f64) {
        let (sa, sb) = (soft_threshold_scalar(a, lambda), soft_threshold_scalar(b, lambda));
        prop_assert!((sa - sb).abs() <= (a - b).abs() * (1.0 + 1e-12) + 1e-15);
        if a.abs() <= lambda {
            prop_assert_eq!(sa, 0.0);
        } else {
            prop_assert!((sa - (a - lambda * a.signum())).abs() < 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn first_stage_rows_reproduce_ac_measurements((v, t) in state(&ieee14())) {
        let case = ieee14();
        let kinds = MeasurementPlan::full().kinds(&case);
        let layout = StageOneLayout::global(&case);
        let (b, _) = build_stage1_matrices(&case, &kinds, &[], &layout).unwrap();
        let bz = b.mul_vec(&y_from_state(&case, &v, &t, &layout));
        let z = evaluate_ac(&case, &kinds, &v, &t).unwrap();
        for (r, zr) in z.iter().enumerate() {
            prop_assert!((bz[r] - zr).abs() < 1e-12, "row {} ({:?}): {} vs {}", r, kinds[r], bz[r], zr);
        }
    }

    #[test]
    fn second_stage_rows_reproduce_u((v, t) in state(&ieee14())) {
        let case = ieee14();
        let u_layout = IntermediateLayout::new(&case, (0..case.n_buses()).collect(), (0..case.n_branches()).collect(), vec![2, 7]);
        let x_layout = StateLayout::global(&case);
        let c = build_stage2_matrix(&case, &u_layout, &x_layout).unwrap();
        let cx = c.mul_vec(&x_from_state(&x_layout, &v, &t));
        let u = u_from_state(&case, &v, &t, &u_layout);
        prop_assert!((cx - u).amax() < 1e-12);
    }

    #[test]
    fn transform_round_trip((v, t) in state(&ieee14())) {
        let case = ieee14();
        let y_layout = StageOneLayout::global(&case);
        let u_layout = IntermediateLayout::global(&case);
        let y = y_from_state(&case, &v, &t, &y_layout);
        let u = nonlinear_transform(&case, &y, &y_layout, &u_layout, &[]).unwrap();
        let expect = u_from_state(&case, &v, &t, &u_layout);
        for (a, b) in u.iter().zip(expect.iter()) {
            prop_assert!(wrap_angle(a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn incidence_maps_bus_values_to_branches(alpha in prop::collection::vec(-0.2..0.2f64, 14), (_, t) in state(&ieee14())) {
        let case = ieee14();
        let inc = incidence_matrices(&case);
        let alpha = DVector::from_vec(alpha);
        let ab = inc.absolute().transpose() * &alpha;
        let r = case.reference_pos();
        let t_red = DVector::from_iterator(case.n_buses() - 1, t.iter().enumerate().filter(|(i, _)| *i != r).map(|(_, x)| *x));
        let tb = inc.reduced.transpose() * t_red;
        for k in 0..case.n_branches() {
            let (f, to) = case.branch_ends(k);
            prop_assert!((ab[k] - (alpha[f] + alpha[to])).abs() < 1e-15);
            prop_assert!((tb[k] - (t[f] - t[to])).abs() < 1e-15);
        }
    }
}

#[test]
fn incidence_columns_sum_to_zero() {
    let case = ieee14();
    let inc = incidence_matrices(&case);
    for k in 0..case.n_branches() {
        assert_eq!(inc.full.column(k).sum(), 0.0);
        assert_eq!(inc.full.column(k).abs().sum(), 2.0);
    }
    assert_eq!(inc.reduced.nrows(), 13);
}

#[test]
fn zero_injection_rows_vanish_at_the_true_state() {
    let case = ieee14();
    let layout = StageOneLayout::global(&case);
    let zi: Vec<usize> = case.zero_injection_buses();
    assert!(!zi.is_empty());
    let kinds: Vec<MeasurementKind> = Vec::new();
    let (_, e) = build_stage1_matrices(&case, &kinds, &zi, &layout).unwrap();
    let y = y_from_state(&case, &case.true_magnitudes(), &case.true_angles(), &layout);
    assert!(e.mul_vec(&y).amax() < 1e-9);
}
