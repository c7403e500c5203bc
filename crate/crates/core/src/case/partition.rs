//! Area partitions: tie-lines, ownership and extended boundary-bus sets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::NetworkCase;
use crate::{Error, Result};

/// Assignment of every bus (by external id) to an area `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AreaPartition {
    pub assignment: BTreeMap<usize, usize>,
}

impl AreaPartition {
    pub fn new(assignment: BTreeMap<usize, usize>) -> Self {
        AreaPartition { assignment }
    }

    /// Everything in area 1.
    pub fn single(case: &NetworkCase) -> Self {
        AreaPartition {
            assignment: case.buses.iter().map(|b| (b.id, 1)).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serialization is infallible")
    }

    pub fn count(&self) -> usize {
        self.assignment.values().copied().max().unwrap_or(0)
    }

    pub fn area_of(&self, bus_id: usize) -> Option<usize> {
        self.assignment.get(&bus_id).copied()
    }
}

/// One area's view of the network. Buses and branches are referenced by
/// their position in the case.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaView {
    /// 1-based area index.
    pub area: usize,
    /// `N_a`, sorted.
    pub buses: Vec<usize>,
    /// `E_a`: branches with both ends in `N_a`.
    pub internal_branches: Vec<usize>,
    /// `Γ_{a,b}` keyed by neighbour `b`.
    pub ties: BTreeMap<usize, Vec<usize>>,
    /// `Γ̂_{a,b}`: ties owned by this area (the lower-indexed side).
    pub owned_ties: BTreeMap<usize, Vec<usize>>,
    /// `N̂_a^BB`: far-end buses of owned ties.
    pub boundary_ext: Vec<usize>,
}

impl AreaView {
    /// `Δ_a`.
    pub fn neighbors(&self) -> Vec<usize> {
        self.ties.keys().copied().collect()
    }

    pub fn all_ties(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.ties.values().flatten().copied().collect();
        set.into_iter().collect()
    }

    pub fn owned_tie_list(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.owned_ties.values().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Branch scope of the first stage: `E_a ∪ Γ_a`.
    pub fn stage1_branches(&self) -> Vec<usize> {
        let mut v = self.internal_branches.clone();
        v.extend(self.all_ties());
        v.sort_unstable();
        v
    }

    /// Branch scope of the transform and second stage: `E_a ∪ Γ̂_a`.
    pub fn stage2_branches(&self) -> Vec<usize> {
        let mut v = self.internal_branches.clone();
        v.extend(self.owned_tie_list());
        v.sort_unstable();
        v
    }

    /// Bus scope of the second stage: `N_a` followed by `N̂_a^BB`.
    pub fn stage2_buses(&self) -> Vec<usize> {
        let mut v = self.buses.clone();
        v.extend(self.boundary_ext.iter().copied());
        v
    }
}

/// Areas holding a copy of one bus in the second stage (`M_i`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusGroup {
    /// Bus position.
    pub bus: usize,
    /// Sorted area indices, home area included.
    pub members: Vec<usize>,
}

impl ConsensusGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Builds per-area views. Area `a` owns a tie-line to area `b` iff `a < b`,
/// and holds a second-stage copy of the far end of every tie it owns.
pub fn build_partition(case: &NetworkCase, partition: &AreaPartition) -> Result<Vec<AreaView>> {
    let r = partition.count();
    if r == 0 {
        return Err(Error::Partition("partition is empty".into()));
    }
    let mut home = vec![0usize; case.n_buses()];
    for (pos, bus) in case.buses.iter().enumerate() {
        let a = partition
            .area_of(bus.id)
            .ok_or_else(|| Error::Partition(format!("bus {} has no area", bus.id)))?;
        if a == 0 {
            return Err(Error::Partition(format!("bus {} assigned to area 0; areas are 1-based", bus.id)));
        }
        home[pos] = a;
    }
    for id in partition.assignment.keys() {
        if case.bus_pos(*id).is_none() {
            return Err(Error::Partition(format!("partition names unknown bus {id}")));
        }
    }

    let mut views: Vec<AreaView> = (1..=r)
        .map(|a| AreaView {
            area: a,
            buses: Vec::new(),
            internal_branches: Vec::new(),
            ties: BTreeMap::new(),
            owned_ties: BTreeMap::new(),
            boundary_ext: Vec::new(),
        })
        .collect();
    for (pos, &a) in home.iter().enumerate() {
        views[a - 1].buses.push(pos);
    }
    if let Some(v) = views.iter().find(|v| v.buses.is_empty()) {
        return Err(Error::Partition(format!("area {} has no buses", v.area)));
    }

    for k in 0..case.n_branches() {
        let (f, t) = case.branch_ends(k);
        let (af, at) = (home[f], home[t]);
        if af == at {
            views[af - 1].internal_branches.push(k);
            continue;
        }
        views[af - 1].ties.entry(at).or_default().push(k);
        views[at - 1].ties.entry(af).or_default().push(k);
        let (owner, other) = if af < at { (af, at) } else { (at, af) };
        views[owner - 1].owned_ties.entry(other).or_default().push(k);
        let far = if af == owner { t } else { f };
        if !views[owner - 1].boundary_ext.contains(&far) {
            views[owner - 1].boundary_ext.push(far);
        }
    }
    for v in &mut views {
        v.boundary_ext.sort_unstable();
        check_connected(case, v)?;
    }
    Ok(views)
}

fn check_connected(case: &NetworkCase, view: &AreaView) -> Result<()> {
    let local: BTreeMap<usize, usize> = view.buses.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut adj = vec![Vec::new(); view.buses.len()];
    for &k in &view.internal_branches {
        let (f, t) = case.branch_ends(k);
        adj[local[&f]].push(local[&t]);
        adj[local[&t]].push(local[&f]);
    }
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::Partition(format!("area {} is not internally connected", view.area)))
    }
}

/// Home area of every bus position.
pub fn home_areas(views: &[AreaView], n_buses: usize) -> Vec<usize> {
    let mut home = vec![0; n_buses];
    for v in views {
        for &i in &v.buses {
            home[i] = v.area;
        }
    }
    home
}

/// Second-stage consensus groups for every bus held by two or more areas.
pub fn consensus_groups(views: &[AreaView], n_buses: usize) -> Vec<ConsensusGroup> {
    let home = home_areas(views, n_buses);
    let mut members: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for v in views {
        for &i in &v.boundary_ext {
            let entry = members.entry(i).or_default();
            entry.insert(home[i]);
            entry.insert(v.area);
        }
    }
    members
        .into_iter()
        .map(|(bus, m)| ConsensusGroup { bus, members: m.into_iter().collect() })
        .collect()
}
