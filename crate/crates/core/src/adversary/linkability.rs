use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::btstack::Tick;
use crate::model::{DeviceId, FriendlyName};
use crate::trace::Sighting;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    /// Same identifier in both epochs.
    IdEquality,
    /// Same friendly name; ties go to the smallest unclaimed identifier.
    NameEquality,
}

/// Claim that `from` in `epoch` and `to` in `epoch + 1` are one device.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub epoch: u64,
    pub from: DeviceId,
    pub to: DeviceId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkReport {
    pub matcher: Matcher,
    pub epoch_length: Tick,
    pub links: Vec<Link>,
}

/// Identifiers seen per epoch, each with the first name it announced.
pub fn epoch_observations(sightings: &[Sighting], epoch_length: Tick) -> BTreeMap<u64, BTreeMap<DeviceId, FriendlyName>> {
    let mut out: BTreeMap<u64, BTreeMap<DeviceId, FriendlyName>> = BTreeMap::new();
    for s in sightings {
        out.entry(s.tick / epoch_length)
            .or_default()
            .entry(s.observed_id)
            .or_insert_with(|| s.observed_name.clone());
    }
    out
}

/// Greedy one-to-one linking of identifiers across consecutive epochs.
pub fn link_epochs(sightings: &[Sighting], epoch_length: Tick, matcher: Matcher) -> Result<LinkReport, AttackError> {
    if epoch_length == 0 {
        return Err(AttackError::Precondition("epoch length must be at least 1".into()));
    }
    let obs = epoch_observations(sightings, epoch_length);
    let mut links = Vec::new();
    for (&e, now) in &obs {
        let Some(next) = obs.get(&(e + 1)) else { continue };
        match matcher {
            Matcher::IdEquality => {
                links.extend(now.keys().filter(|id| next.contains_key(id)).map(|&id| Link { epoch: e, from: id, to: id }));
            }
            Matcher::NameEquality => {
                let mut taken = BTreeSet::new();
                for (&from, name) in now {
                    let to = next.iter().find(|(id, n)| *n == name && !taken.contains(*id)).map(|(id, _)| *id);
                    if let Some(to) = to {
                        taken.insert(to);
                        links.push(Link { epoch: e, from, to });
                    }
                }
            }
        }
    }
    Ok(LinkReport { matcher, epoch_length, links })
}
