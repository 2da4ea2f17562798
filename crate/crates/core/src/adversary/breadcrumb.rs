use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::pos::PosDatabase;
use crate::btstack::Tick;
use crate::model::DeviceId;
use crate::trace::Sighting;

/// Where and when something happened, as known to an investigator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentQuery {
    pub scanner_id: String,
    pub tick: Tick,
    /// Half-width of the search window around `tick`.
    pub window: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Implication {
    pub device: DeviceId,
    /// Original purchaser, if the device was ever sold through `pos`.
    pub person: Option<String>,
}

/// Every id sighted at the incident scanner within the window, tied to the
/// first person who bought it. Later transfers or discards are invisible to
/// the join.
pub fn implicate_breadcrumbs(sightings: &[Sighting], incident: &IncidentQuery, pos: &PosDatabase) -> Vec<Implication> {
    let lo = incident.tick.saturating_sub(incident.window);
    let hi = incident.tick.saturating_add(incident.window);
    let ids: BTreeSet<DeviceId> = sightings
        .iter()
        .filter(|s| s.scanner_id == incident.scanner_id && (lo..=hi).contains(&s.tick))
        .map(|s| s.observed_id)
        .collect();
    ids.into_iter()
        .map(|device| Implication { device, person: pos.original_purchaser(device).map(|r| r.name.clone()) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::pos::PosRecord;
    use crate::model::{DeviceClass, FriendlyName};

    fn at(tick: Tick, n: u32) -> Sighting {
        Sighting {
            tick,
            scanner_id: "S".into(),
            observed_id: DeviceId::from_parts(1, n),
            observed_class: DeviceClass::default(),
            observed_name: FriendlyName::default(),
        }
    }

    #[test]
    fn window_and_join() {
        let pos = PosDatabase::new([PosRecord {
            device: DeviceId::from_parts(1, 1),
            name: "Alice".into(),
            seller: "shop".into(),
            tick: 0,
        }]);
        let log = [at(1000, 1), at(1100, 2), at(5000, 3)];
        let q = IncidentQuery { scanner_id: "S".into(), tick: 1050, window: 60 };
        assert_eq!(
            implicate_breadcrumbs(&log, &q, &pos),
            vec![
                Implication { device: DeviceId::from_parts(1, 1), person: Some("Alice".into()) },
                Implication { device: DeviceId::from_parts(1, 2), person: None },
            ]
        );
        let empty = IncidentQuery { scanner_id: "S".into(), tick: 3000, window: 10 };
        assert!(implicate_breadcrumbs(&log, &empty, &pos).is_empty());
        let elsewhere = IncidentQuery { scanner_id: "T".into(), tick: 1050, window: 60 };
        assert!(implicate_breadcrumbs(&log, &elsewhere, &pos).is_empty());
    }
}
