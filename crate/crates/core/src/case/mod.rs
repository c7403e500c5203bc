//! Network cases: buses, π-model branches, partitions and incidence.

mod incidence;
mod matpower;
mod partition;

pub use incidence::{incidence_matrices, Incidence};
pub use matpower::parse_matpower_case;
pub use partition::{
    build_partition, consensus_groups, home_areas, AreaPartition, AreaView, ConsensusGroup,
};

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A bus with its lumped shunt admittance and the true operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    /// Shunt conductance in p.u.
    pub g_sh: f64,
    /// Shunt susceptance in p.u., including half line charging of incident branches.
    pub b_sh: f64,
    #[serde(rename = "zero_injection")]
    pub is_zero_injection: bool,
    pub v_true: f64,
    /// Radians.
    pub theta_true: f64,
}

/// Series element of a π-model branch. Line charging is lumped into the
/// terminal bus shunts, so only the series admittance and the off-nominal
/// ratio (on the `from` side) remain here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub tap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    reference_bus: usize,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    areas: Option<BTreeMap<usize, usize>>,
}

/// A validated network case. Bus and branch positions (their index in
/// `buses`/`branches`) are used as dense identifiers throughout the crate;
/// external bus numbers only appear at the I/O boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub reference_bus: usize,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub areas: Option<BTreeMap<usize, usize>>,
    index: HashMap<usize, usize>,
    reference_pos: usize,
}

impl NetworkCase {
    pub fn new(
        base_mva: f64,
        reference_bus: usize,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!("base_mva must be positive, got {base_mva}")));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (pos, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, pos).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.v_true > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {} has non-positive voltage magnitude {}",
                    bus.id, bus.v_true
                )));
            }
        }
        let reference_pos = *index.get(&reference_bus).ok_or_else(|| {
            Error::Validation(format!("reference bus {reference_bus} not found"))
        })?;
        // Estimators fix the reference angle at zero, so the truth is stored
        // on the same footing.
        let mut buses = buses;
        let theta_ref = buses[reference_pos].theta_true;
        if theta_ref != 0.0 {
            for bus in &mut buses {
                bus.theta_true -= theta_ref;
            }
        }
        for (k, br) in branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(Error::Validation(format!(
                        "branch {k} ({}-{}) references unknown bus {end}",
                        br.from, br.to
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {k} is a self loop at bus {}", br.from)));
            }
            if br.g == 0.0 && br.b == 0.0 {
                return Err(Error::Validation(format!(
                    "branch {k} ({}-{}) has zero series admittance",
                    br.from, br.to
                )));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {k} ({}-{}) has non-positive tap {}",
                    br.from, br.to, br.tap
                )));
            }
        }
        let case = NetworkCase {
            base_mva,
            reference_bus,
            buses,
            branches,
            areas: None,
            index,
            reference_pos,
        };
        if !case.is_connected() {
            return Err(Error::Validation("network is not connected".into()));
        }
        Ok(case)
    }

    pub fn with_areas(mut self, areas: BTreeMap<usize, usize>) -> Self {
        self.areas = Some(areas);
        self
    }

    /// Same network with another reference bus; true angles are rebased.
    pub fn with_reference(self, reference_bus: usize) -> Result<Self> {
        let areas = self.areas;
        let case = NetworkCase::new(self.base_mva, reference_bus, self.buses, self.branches)?;
        Ok(match areas {
            Some(a) => case.with_areas(a),
            None => case,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Position of a bus in `buses`.
    pub fn bus_pos(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn require_bus(&self, id: usize) -> Result<usize> {
        self.bus_pos(id)
            .ok_or_else(|| Error::MissingElement(format!("bus {id}")))
    }

    pub fn reference_pos(&self) -> usize {
        self.reference_pos
    }

    /// `(from position, to position)` of a branch.
    pub fn branch_ends(&self, k: usize) -> (usize, usize) {
        let br = &self.branches[k];
        (self.index[&br.from], self.index[&br.to])
    }

    /// Branch positions incident to every bus position.
    pub fn incident_branches(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for k in 0..self.n_branches() {
            let (f, t) = self.branch_ends(k);
            adj[f].push(k);
            adj[t].push(k);
        }
        adj
    }

    pub fn true_magnitudes(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.v_true).collect()
    }

    pub fn true_angles(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.theta_true).collect()
    }

    /// Positions of zero-injection buses.
    pub fn zero_injection_buses(&self) -> Vec<usize> {
        (0..self.n_buses())
            .filter(|&i| self.buses[i].is_zero_injection)
            .collect()
    }

    fn is_connected(&self) -> bool {
        let n = self.n_buses();
        if n == 0 {
            return false;
        }
        let adj = self.incident_branches();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &k in &adj[i] {
                let (f, t) = self.branch_ends(k);
                let j = if f == i { t } else { f };
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text)?;
        let case = NetworkCase::new(file.base_mva, file.reference_bus, file.buses, file.branches)?;
        Ok(match file.areas {
            Some(areas) => case.with_areas(areas),
            None => case,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CaseFile {
            base_mva: self.base_mva,
            reference_bus: self.reference_bus,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            areas: self.areas.clone(),
        };
        serde_json::to_string_pretty(&file).expect("case serialization is infallible")
    }
}

pub fn load_case_json(text: &str) -> Result<NetworkCase> {
    NetworkCase::from_json(text)
}

pub fn save_case_json(case: &NetworkCase) -> String {
    case.to_json()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn two_bus(g: f64, b: f64, theta1: f64) -> NetworkCase {
        NetworkCase::new(
            100.0,
            1,
            vec![
                Bus { id: 1, g_sh: 0.0, b_sh: 0.0, is_zero_injection: false, v_true: 1.0, theta_true: theta1 },
                Bus { id: 2, g_sh: 0.0, b_sh: 0.0, is_zero_injection: false, v_true: 1.0, theta_true: 0.0 },
            ],
            vec![Branch { from: 1, to: 2, g, b, tap: 1.0 }],
        )
        .unwrap()
    }

    /// 3-bus path 1-2-3 plus a closing line 1-3, bus 2 zero-injection.
    pub fn triangle() -> NetworkCase {
        let bus = |id, v, th, zi| Bus { id, g_sh: 0.0, b_sh: 0.02, is_zero_injection: zi, v_true: v, theta_true: th };
        NetworkCase::new(
            100.0,
            1,
            vec![bus(1, 1.04, 0.0, false), bus(2, 1.01, -0.05, false), bus(3, 0.99, -0.09, false)],
            vec![
                Branch { from: 1, to: 2, g: 2.0, b: -12.0, tap: 1.0 },
                Branch { from: 2, to: 3, g: 1.5, b: -9.0, tap: 0.97 },
                Branch { from: 1, to: 3, g: 1.0, b: -6.0, tap: 1.0 },
            ],
        )
        .unwrap()
    }

    pub fn ieee14() -> NetworkCase {
        NetworkCase::from_json(include_str!("../../../../cases/ieee14.json")).unwrap()
    }
}
