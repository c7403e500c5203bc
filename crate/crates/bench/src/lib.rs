//! Shared fixtures for the criterion benches.

use drbse::case::NetworkCase;
use drbse::AreaPartition;

pub fn ieee14() -> (NetworkCase, AreaPartition) {
    (
        NetworkCase::from_json(include_str!("../../../cases/ieee14.json")).expect("bundled case"),
        AreaPartition::from_json(include_str!("../../../cases/ieee14_2area.json")).expect("bundled partition"),
    )
}

pub fn ieee118() -> (NetworkCase, AreaPartition) {
    (
        NetworkCase::from_json(include_str!("../../../cases/ieee118.json")).expect("bundled case"),
        AreaPartition::from_json(include_str!("../../../cases/ieee118_3area.json")).expect("bundled partition"),
    )
}
