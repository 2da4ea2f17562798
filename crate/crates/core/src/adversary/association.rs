use std::collections::BTreeMap;

use super::pos::PosDatabase;
use crate::model::DeviceId;
use crate::trace::Sighting;

/// Names the buyer of every observed identifier that appears in `pos`.
pub fn associate_identities(sightings: &[Sighting], pos: &PosDatabase) -> BTreeMap<DeviceId, String> {
    sightings
        .iter()
        .filter_map(|s| pos.original_purchaser(s.observed_id).map(|r| (s.observed_id, r.name.clone())))
        .collect()
}
