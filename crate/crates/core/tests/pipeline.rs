use std::collections::BTreeMap;

use drbse::admm::{Phase, PayloadKind};
use drbse::case::build_partition;
use drbse::centralized::{centralized_rbse, RobustOptions};
use drbse::measurement::{BadDataSpec, MeasurementKind, MeasurementPlan, MeasurementSet, NoiseSpec};
use drbse::runtime::{generate_measurements, run_drbse};
use drbse::{AreaPartition, EstimatorSettings, NetworkCase, Schedule, ScenarioSpec};

fn ieee14() -> (NetworkCase, AreaPartition) {
    (
        NetworkCase::from_json(include_str!("../../../cases/ieee14.json")).unwrap(),
        AreaPartition::from_json(include_str!("../../../cases/ieee14_2area.json")).unwrap(),
    )
}

fn three_bad(case: &NetworkCase, seed: u64) -> MeasurementSet {
    let targets = ["P_inj(5)", "V(14)", "P_flow(5-6)"]
        .iter()
        .map(|l| MeasurementKind::from_label(case, l).unwrap())
        .collect();
    let spec = ScenarioSpec {
        plan: MeasurementPlan::full(),
        noise: NoiseSpec::default().with_seed(seed),
        bad_data: Some(BadDataSpec::targets(targets, seed)),
    };
    generate_measurements(case, &spec).unwrap()
}

#[test]
fn single_area_matches_centralized() {
    let (case, _) = ieee14();
    let ms = three_bad(&case, 1);
    let settings = EstimatorSettings { epsilon: 1e-9, ..EstimatorSettings::default() };
    let run = run_drbse(&case, &AreaPartition::single(&case), &ms, &settings).unwrap();
    assert!(run.converged());
    let (v, t) = run.state.unwrap();
    let c = centralized_rbse(&case, &ms, &RobustOptions::default()).unwrap();
    for i in 0..case.n_buses() {
        assert!((v[i] - c.v[i]).abs() < 1e-6, "bus {i}: {} vs {}", v[i], c.v[i]);
        assert!((t[i] - c.theta[i]).abs() < 1e-6, "bus {i}: {} vs {}", t[i], c.theta[i]);
    }
    assert!(run.deliveries.is_empty());
}

#[test]
fn schedules_give_bit_identical_runs() {
    let (case, partition) = ieee14();
    let ms = three_bad(&case, 4);
    let runs: Vec<_> = [Schedule::Sequential, Schedule::Reversed, Schedule::Parallel]
        .into_iter()
        .map(|schedule| run_drbse(&case, &partition, &ms, &EstimatorSettings { schedule, ..Default::default() }).unwrap())
        .collect();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let (v0, t0) = runs[0].state.clone().unwrap();
    for r in &runs[1..] {
        let (v, t) = r.state.clone().unwrap();
        assert_eq!(bits(&v), bits(&v0));
        assert_eq!(bits(&t), bits(&t0));
        assert_eq!(r.stage1.trace, runs[0].stage1.trace);
        assert_eq!(r.deliveries, runs[0].deliveries);
    }
}

#[test]
fn stage_one_traffic_is_two_floats_per_tie_line() {
    let (case, partition) = ieee14();
    let views = build_partition(&case, &partition).unwrap();
    let run = run_drbse(&case, &partition, &three_bad(&case, 2), &EstimatorSettings::default()).unwrap();
    let mut per_round: BTreeMap<usize, usize> = BTreeMap::new();
    for d in run.deliveries.iter().filter(|d| d.phase == Phase::StageOne) {
        let ties = views[d.from - 1].ties[&d.to].len();
        assert!(ties > 0);
        assert_eq!(d.payload, PayloadKind::TieLines);
        assert_eq!(d.floats, 2 * ties);
        assert_eq!(d.bytes, 2 * ties * std::mem::size_of::<f64>());
        *per_round.entry(d.round).or_default() += 1;
    }
    assert_eq!(per_round.len(), run.stage1.iterations);
    // One message each way per round on the single area pair.
    assert!(per_round.values().all(|&n| n == 2));
}

#[test]
fn transform_is_silent_and_payloads_are_state_only() {
    let (case, partition) = ieee14();
    let run = run_drbse(&case, &partition, &three_bad(&case, 5), &EstimatorSettings::default()).unwrap();
    assert!(run.converged());
    assert!(run.deliveries.iter().all(|d| d.phase != Phase::Transform));
    for d in &run.deliveries {
        let expect = match d.phase {
            Phase::StageOne => PayloadKind::TieLines,
            _ => PayloadKind::BoundaryBuses,
        };
        assert_eq!(d.payload, expect);
    }
    assert!(run.deliveries.iter().any(|d| d.phase == Phase::StageTwo));
}

#[test]
fn noiseless_two_area_run_is_accurate() {
    let (case, partition) = ieee14();
    let spec = ScenarioSpec { plan: MeasurementPlan::full(), noise: NoiseSpec::noiseless(), bad_data: None };
    let ms = generate_measurements(&case, &spec).unwrap();
    let run = run_drbse(&case, &partition, &ms, &EstimatorSettings::default()).unwrap();
    assert!(run.converged());
    assert!(run.outliers.iter().all(|o| o.value.abs() < 1e-3));
    let (v, t) = run.state.unwrap();
    for i in 0..case.n_buses() {
        assert!((v[i] - case.buses[i].v_true).abs() < 1e-3);
        assert!((t[i] - case.buses[i].theta_true).abs() < 1e-3);
    }
    assert!(run.copy_disagreement < 1e-3);
}

#[test]
fn unconverged_first_stage_skips_the_second() {
    let (case, partition) = ieee14();
    let settings = EstimatorSettings { max_iter: 2, ..Default::default() };
    let run = run_drbse(&case, &partition, &three_bad(&case, 0), &settings).unwrap();
    assert!(!run.stage1.converged);
    assert!(run.stage2.is_none() && run.state.is_none());
    let forced = run_drbse(&case, &partition, &three_bad(&case, 0), &EstimatorSettings { force: true, ..settings }).unwrap();
    assert!(forced.state.is_some());
}
