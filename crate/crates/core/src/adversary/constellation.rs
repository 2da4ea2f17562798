use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::btstack::Tick;
use crate::model::DeviceId;
use crate::trace::Sighting;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    /// Co-occurrence window in ticks.
    pub delta: Tick,
    /// Minimum shared windows for an edge.
    pub k: u32,
    /// Minimum Jaccard similarity of the two window sets for an edge.
    pub tau: f64,
    /// Clusters larger than this are flagged as groups.
    pub group_cap: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self { delta: 60, k: 3, tau: 0.5, group_cap: 4 }
    }
}

impl MiningParams {
    pub fn check(&self) -> Result<(), AttackError> {
        if self.delta == 0 {
            return Err(AttackError::Precondition("window delta must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(AttackError::Precondition("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(AttackError::Precondition(format!("tau {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: BTreeSet<DeviceId>,
    /// More devices than one person plausibly carries.
    pub group: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSet {
    /// Disjoint, ordered by smallest member.
    pub clusters: Vec<Cluster>,
    pub params: MiningParams,
}

impl ConstellationSet {
    pub fn cluster_of(&self, id: DeviceId) -> Option<usize> {
        self.clusters.iter().position(|c| c.members.contains(&id))
    }

    pub fn partition(&self) -> BTreeSet<BTreeSet<DeviceId>> {
        self.clusters.iter().map(|c| c.members.clone()).collect()
    }
}

type Window = (String, Tick);

/// Windows `(scanner, tick / delta)` in which each id was sighted.
fn window_sets(sightings: &[Sighting], delta: Tick) -> BTreeMap<DeviceId, BTreeSet<Window>> {
    let mut out: BTreeMap<DeviceId, BTreeSet<Window>> = BTreeMap::new();
    for s in sightings {
        out.entry(s.observed_id).or_default().insert((s.scanner_id.clone(), s.tick / delta));
    }
    out
}

fn passes(shared: usize, a: usize, b: usize, params: &MiningParams) -> bool {
    let union = a + b - shared;
    shared >= params.k as usize && union > 0 && shared as f64 / union as f64 >= params.tau
}

pub fn mine_constellations(sightings: &[Sighting], params: MiningParams) -> Result<ConstellationSet, AttackError> {
    params.check()?;
    let sets = window_sets(sightings, params.delta);
    let ids: Vec<DeviceId> = sets.keys().copied().collect();
    let index: BTreeMap<DeviceId, usize> = ids.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    let mut occupants: BTreeMap<&Window, Vec<usize>> = BTreeMap::new();
    for (id, windows) in &sets {
        for w in windows {
            occupants.entry(w).or_default().push(index[id]);
        }
    }
    let mut shared: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for members in occupants.values() {
        for (n, &a) in members.iter().enumerate() {
            for &b in &members[n + 1..] {
                *shared.entry((a, b)).or_default() += 1;
            }
        }
    }

    let mut uf = UnionFind::new(ids.len());
    for (&(a, b), &count) in &shared {
        if passes(count, sets[&ids[a]].len(), sets[&ids[b]].len(), &params) {
            uf.union(a, b);
        }
    }
    Ok(ConstellationSet { clusters: uf.clusters(&ids, params.group_cap), params })
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn clusters(&mut self, ids: &[DeviceId], group_cap: usize) -> Vec<Cluster> {
        let mut groups: BTreeMap<usize, BTreeSet<DeviceId>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            let root = self.find(i);
            groups.entry(root).or_default().insert(*id);
        }
        groups
            .into_values()
            .filter(|m| m.len() > 1)
            .map(|members| Cluster { group: members.len() > group_cap, members })
            .collect()
    }
}
