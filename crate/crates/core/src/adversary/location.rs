use serde::{Deserialize, Serialize};

use crate::btstack::Tick;
use crate::model::DeviceId;
use crate::trace::{PageHit, Sighting};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Visit {
    pub scanner_id: String,
    pub first: Tick,
    pub last: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Itinerary {
    pub target: DeviceId,
    pub visits: Vec<Visit>,
}

impl Itinerary {
    /// Folds chronological `(tick, scanner)` observations into visits. A new
    /// visit starts on a scanner change or a gap longer than `merge_gap`.
    pub fn from_observations<'a>(
        target: DeviceId,
        observations: impl IntoIterator<Item = (Tick, &'a str)>,
        merge_gap: Tick,
    ) -> Self {
        let mut obs: Vec<(Tick, &str)> = observations.into_iter().collect();
        obs.sort();
        obs.dedup();
        let mut visits: Vec<Visit> = Vec::new();
        for (tick, scanner) in obs {
            match visits.last_mut() {
                Some(v) if v.scanner_id == scanner && tick - v.last <= merge_gap => v.last = tick,
                _ => visits.push(Visit { scanner_id: scanner.to_owned(), first: tick, last: tick }),
            }
        }
        Itinerary { target, visits }
    }
}

pub fn track_locations(sightings: &[Sighting], target: DeviceId, merge_gap: Tick) -> Itinerary {
    let obs = sightings
        .iter()
        .filter(|s| s.observed_id == target)
        .map(|s| (s.tick, s.scanner_id.as_str()));
    Itinerary::from_observations(target, obs, merge_gap)
}

/// Same as [`track_locations`] but fed by directed pages of a known id,
/// which stealth devices still answer.
pub fn track_by_paging(pages: &[PageHit], target: DeviceId, merge_gap: Tick) -> Itinerary {
    let obs = pages
        .iter()
        .filter(|p| p.target_id == target)
        .map(|p| (p.tick, p.scanner_id.as_str()));
    Itinerary::from_observations(target, obs, merge_gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceClass, FriendlyName};

    fn at(tick: Tick, scanner: &str, id: DeviceId) -> Sighting {
        Sighting {
            tick,
            scanner_id: scanner.into(),
            observed_id: id,
            observed_class: DeviceClass::default(),
            observed_name: FriendlyName::default(),
        }
    }

    fn visit(s: &str, first: Tick, last: Tick) -> Visit {
        Visit { scanner_id: s.into(), first, last }
    }

    #[test]
    fn merging() {
        let d = DeviceId::from_parts(1, 1);
        let other = DeviceId::from_parts(1, 2);
        assert!(track_locations(&[at(60, "A", other)], d, 300).visits.is_empty());

        let log = [at(60, "A", d), at(120, "A", d), at(60, "B", other)];
        assert_eq!(track_locations(&log, d, 300).visits, vec![visit("A", 60, 120)]);

        let log = [at(0, "A", d), at(1000, "B", d), at(2000, "A", d)];
        assert_eq!(
            track_locations(&log, d, 300).visits,
            vec![visit("A", 0, 0), visit("B", 1000, 1000), visit("A", 2000, 2000)]
        );

        let log = [at(0, "A", d), at(400, "A", d)];
        assert_eq!(track_locations(&log, d, 300).visits.len(), 2);
    }

    #[test]
    fn paging_feeds_the_same_fold() {
        let d = DeviceId::from_parts(1, 1);
        let hits: Vec<PageHit> = [60, 120]
            .map(|tick| PageHit { tick, scanner_id: "A".into(), target_id: d, services: vec![] })
            .into();
        assert_eq!(track_by_paging(&hits, d, 300).visits, vec![visit("A", 60, 120)]);
    }
}
