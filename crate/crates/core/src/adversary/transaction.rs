use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::constellation::{mine_constellations, MiningParams};
use super::AttackError;
use crate::btstack::Tick;
use crate::model::DeviceId;
use crate::trace::Sighting;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionParams {
    pub mining: MiningParams,
    /// Length of each re-clustering window.
    pub window: Tick,
    /// Consecutive windows a new assignment must hold before it counts.
    pub confirm: u32,
}

impl Default for TransactionParams {
    fn default() -> Self {
        Self { mining: MiningParams::default(), window: 600, confirm: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionEvent {
    pub device: DeviceId,
    pub from_cluster: usize,
    pub to_cluster: usize,
    pub switch_tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionReport {
    pub events: Vec<TransactionEvent>,
    /// Persistent cluster labels, indexed by the event cluster fields.
    pub labels: Vec<BTreeSet<DeviceId>>,
}

fn jaccard(a: &BTreeSet<DeviceId>, b: &BTreeSet<DeviceId>) -> f64 {
    let shared = a.intersection(b).count();
    let union = a.len() + b.len() - shared;
    if union == 0 {
        0.0
    } else {
        shared as f64 / union as f64
    }
}

#[derive(Default)]
struct Assignment {
    established: Option<usize>,
    candidate: Option<(usize, u64, u32)>,
}

/// Re-mines constellations per window and follows each device's cluster
/// label across windows.
///
/// Window clusters are matched to a registry of persistent labels by the
/// best Jaccard similarity reaching `tau`; unmatched clusters open new labels.
/// Windows where a device is unseen or unclustered leave its state alone.
pub fn detect_transactions(sightings: &[Sighting], params: TransactionParams) -> Result<TransactionReport, AttackError> {
    params.mining.check()?;
    if params.window < params.mining.delta {
        return Err(AttackError::Precondition(format!(
            "window {} shorter than delta {}",
            params.window, params.mining.delta
        )));
    }
    let confirm = params.confirm.max(1);
    let mut by_window: BTreeMap<Tick, Vec<Sighting>> = BTreeMap::new();
    for s in sightings {
        by_window.entry(s.tick / params.window).or_default().push(s.clone());
    }

    let mut labels: Vec<BTreeSet<DeviceId>> = Vec::new();
    let mut state: BTreeMap<DeviceId, Assignment> = BTreeMap::new();
    let mut events = Vec::new();
    for (w, log) in by_window {
        let set = mine_constellations(&log, params.mining)?;
        for cluster in set.clusters {
            let best = labels
                .iter()
                .enumerate()
                .map(|(i, l)| (i, jaccard(&cluster.members, l)))
                .filter(|&(_, j)| j >= params.mining.tau && j > 0.0)
                .fold(None, |acc: Option<(usize, f64)>, (i, j)| match acc {
                    Some((_, bj)) if bj >= j => acc,
                    _ => Some((i, j)),
                });
            let label = match best {
                Some((i, _)) => i,
                None => {
                    labels.push(cluster.members.clone());
                    labels.len() - 1
                }
            };
            for device in cluster.members {
                let a = state.entry(device).or_default();
                let Some(current) = a.established else {
                    a.established = Some(label);
                    continue;
                };
                if label == current {
                    a.candidate = None;
                    continue;
                }
                let (first, count) = match a.candidate {
                    Some((l, first, n)) if l == label => (first, n + 1),
                    _ => (w, 1),
                };
                if count >= confirm {
                    events.push(TransactionEvent {
                        device,
                        from_cluster: current,
                        to_cluster: label,
                        switch_tick: first * params.window,
                    });
                    a.established = Some(label);
                    a.candidate = None;
                } else {
                    a.candidate = Some((label, first, count));
                }
            }
        }
    }
    events.sort_by_key(|e| (e.switch_tick, e.device));
    Ok(TransactionReport { events, labels })
}
