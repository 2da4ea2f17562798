use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    device_value, manufacturer_of, DeviceClass, DeviceDescriptor, DeviceId, MajorClass, OuiTable, Value, ValueTable,
};
use crate::trace::Sighting;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    /// Who the profile is about: a person's name, or a free label.
    pub subject: String,
    /// Distinct profiled devices with the class they announced.
    pub devices: Vec<(DeviceId, DeviceClass)>,
    pub classes: BTreeMap<MajorClass, u32>,
    pub manufacturers: BTreeMap<String, u32>,
    pub total_value: Value,
}

/// Profiles the observed members of `subjects`. Each device counts once, with
/// the class from its first sighting.
pub fn profile_preferences(
    subject: impl Into<String>,
    sightings: &[Sighting],
    subjects: &BTreeSet<DeviceId>,
    oui: &OuiTable,
    values: &ValueTable,
) -> PreferenceProfile {
    let mut first: BTreeMap<DeviceId, DeviceClass> = BTreeMap::new();
    for s in sightings.iter().filter(|s| subjects.contains(&s.observed_id)) {
        first.entry(s.observed_id).or_insert(s.observed_class);
    }
    let mut profile = PreferenceProfile { subject: subject.into(), ..Default::default() };
    for (&id, &class) in &first {
        let desc = DeviceDescriptor::observed(id, class);
        *profile.classes.entry(class.major()).or_default() += 1;
        *profile.manufacturers.entry(manufacturer_of(id, oui).to_owned()).or_default() += 1;
        profile.total_value += device_value(&desc, oui, values);
        profile.devices.push((id, class));
    }
    profile
}
