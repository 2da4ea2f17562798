//! Scenario files: the world graph, population, device policies, scanner
//! placement and scripted events.
//!
//! Scenarios are written as TOML (or JSON, chosen by file extension). The
//! canonical form is compact JSON with sorted keys; its SHA-256 is the
//! config digest stamped on every trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::btstack::{Tick, DEFAULT_RANGE_M};
use crate::countermeasures::{
    derived_renaming_seed, DevicePolicy, NameMode, NamePolicy, RangeKnob, RenamingState, VisibilityWindow,
};
use crate::model::{DeviceClass, DeviceId, FriendlyName, VisibilityMode, CLASS_MASK, ID_MASK};

pub const DEFAULT_SCAN_PERIOD: Tick = 60;

fn default_range() -> f64 {
    DEFAULT_RANGE_M
}
fn default_period() -> Tick {
    DEFAULT_SCAN_PERIOD
}
fn default_seed() -> u64 {
    1
}
fn default_nic_base() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub horizon: Tick,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Share of people whose devices (without an explicit mode) are made
    /// discoverable; the rest are stealth. Unset means everyone is discoverable.
    #[serde(default)]
    pub discoverable_fraction: Option<f64>,
    #[serde(default = "default_range")]
    pub base_range: f64,
    #[serde(default)]
    pub miss_probability: f64,
    #[serde(default)]
    pub sites: Vec<SiteConfig>,
    #[serde(default)]
    pub edges: Vec<EdgeConfig>,
    #[serde(default)]
    pub scanners: Vec<ScannerConfig>,
    #[serde(default)]
    pub people: Vec<PersonConfig>,
    #[serde(default)]
    pub crowds: Vec<CrowdConfig>,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub pairings: Vec<PairingConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub id: String,
    pub position: [f64; 2],
    #[serde(default)]
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub from: String,
    pub to: String,
    pub travel: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScannerConfig {
    pub id: String,
    pub site: String,
    #[serde(default = "default_period")]
    pub period: Tick,
    #[serde(default)]
    pub offset: Tick,
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default)]
    pub address: Option<DeviceId>,
    /// Known identifiers this scanner pages on every scan tick.
    #[serde(default)]
    pub page_targets: Vec<DeviceId>,
}

impl ScannerConfig {
    pub fn scans_at(&self, tick: Tick) -> bool {
        tick >= self.offset && (tick - self.offset) % self.period == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub tick: Tick,
    pub site: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonConfig {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub role: String,
    pub itinerary: Vec<Waypoint>,
    #[serde(default)]
    pub leave: Option<Tick>,
    #[serde(default)]
    pub devices: Vec<DeviceConfig>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: DeviceId,
    pub class: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Option<VisibilityMode>,
    #[serde(default)]
    pub services: Vec<String>,
    #[serde(default)]
    pub value_hint: Option<u64>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub visibility: Vec<WindowConfig>,
    #[serde(default)]
    pub renaming: Option<RenamingConfig>,
    #[serde(default)]
    pub knob: Option<KnobConfig>,
    #[serde(default)]
    pub names: Option<NamesConfig>,
    #[serde(default)]
    pub rotate_name: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub from: Tick,
    pub until: Tick,
    pub mode: VisibilityMode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenamingConfig {
    /// Shared secret. When absent, each device derives its own from its id.
    #[serde(default)]
    pub seed: Option<u64>,
    pub epoch_length: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnobConfig {
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamesConfig {
    #[serde(default)]
    pub mode: NameMode,
    #[serde(default)]
    pub rename_period: Tick,
}

impl PolicyConfig {
    /// Policy for the device `id`.
    pub fn build(&self, id: DeviceId) -> Result<DevicePolicy, String> {
        let windows = self
            .visibility
            .iter()
            .map(|w| VisibilityWindow { from: w.from, until: w.until, mode: w.mode })
            .collect();
        let mut policy = DevicePolicy::default().with_visibility(windows).map_err(|e| e.to_string())?;
        if let Some(r) = &self.renaming {
            policy.renaming = Some(RenamingState::new(r.seed.unwrap_or_else(|| derived_renaming_seed(id)), r.epoch_length).map_err(|e| e.to_string())?);
        }
        if let Some(k) = &self.knob {
            policy.knob = RangeKnob::new(k.fraction).map_err(|e| e.to_string())?;
        }
        if let Some(n) = &self.names {
            policy.names = NamePolicy { mode: n.mode, rename_period: n.rename_period };
        }
        policy.rotate_name = self.rotate_name;
        Ok(policy)
    }
}

/// A batch of generated pedestrians, one device each, walking `route` with
/// `dwell` ticks per site. Start times are drawn in `[start, start + spread]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdConfig {
    pub prefix: String,
    pub count: u32,
    /// Manufacturer prefix of the generated devices, 6 hex digits.
    pub oui: String,
    #[serde(default = "default_nic_base")]
    pub nic_base: u32,
    pub class: u32,
    #[serde(default)]
    pub name_prefix: String,
    #[serde(default)]
    pub role: String,
    pub route: Vec<String>,
    pub dwell: Tick,
    #[serde(default)]
    pub start: Tick,
    #[serde(default)]
    pub spread: Tick,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
}

impl CrowdConfig {
    pub fn oui_value(&self) -> Option<u32> {
        (self.oui.len() == 6 && self.oui.bytes().all(|b| b.is_ascii_hexdigit()))
            .then(|| u32::from_str_radix(&self.oui, 16).ok())
            .flatten()
    }

    pub fn person_id(&self, i: u32) -> String {
        format!("{}{:04}", self.prefix, i)
    }

    pub fn device_id(&self, i: u32) -> DeviceId {
        DeviceId::from_parts(self.oui_value().unwrap_or(0), self.nic_base + i)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventConfig {
    PointOfSale { tick: Tick, person: String, device: DeviceId, seller: String },
    Transfer { tick: Tick, device: DeviceId, from_person: String, to_person: String },
    Discard { tick: Tick, device: DeviceId, site: String, by_person: String },
    Pickup { tick: Tick, device: DeviceId, site: String, by_person: String },
    Incident { tick: Tick, site: String },
}

impl EventConfig {
    pub fn tick(&self) -> Tick {
        match self {
            EventConfig::PointOfSale { tick, .. }
            | EventConfig::Transfer { tick, .. }
            | EventConfig::Discard { tick, .. }
            | EventConfig::Pickup { tick, .. }
            | EventConfig::Incident { tick, .. } => *tick,
        }
    }
}

/// `device` pages `peer` every `period` ticks. When the peer rotates its
/// identifier, the pairing holds the peer's renaming seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    pub device: DeviceId,
    pub peer: DeviceId,
    #[serde(default = "default_period")]
    pub period: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationError {
    DuplicateId { kind: &'static str, id: String },
    UnknownSite { context: String, site: String },
    UnknownPerson { context: String, person: String },
    UnknownDevice { context: String, device: DeviceId },
    OutOfRange { field: String, value: String },
    Invalid { context: String, reason: String },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::DuplicateId { kind, id } => write!(f, "duplicate {kind} id {id:?}"),
            ValidationError::UnknownSite { context, site } => write!(f, "{context}: unknown site {site:?}"),
            ValidationError::UnknownPerson { context, person } => {
                write!(f, "{context}: unknown person {person:?}")
            }
            ValidationError::UnknownDevice { context, device } => write!(f, "{context}: unknown device {device}"),
            ValidationError::OutOfRange { field, value } => write!(f, "{field} out of range: {value}"),
            ValidationError::Invalid { context, reason } => write!(f, "{context}: {reason}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("scenario is invalid:\n  {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<ValidationError>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioFormat {
    Toml,
    Json,
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => ScenarioFormat::Json,
        _ => ScenarioFormat::Toml,
    };
    parse_scenario(&text, format)
}

pub fn parse_scenario(text: &str, format: ScenarioFormat) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = match format {
        ScenarioFormat::Toml => toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?,
        ScenarioFormat::Json => serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?,
    };
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    /// Compact JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        // Going through Value sorts object keys (serde_json's default map is ordered).
        let value = serde_json::to_value(self).expect("scenario is always representable as JSON");
        value.to_string()
    }

    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let errors = self.validation_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    /// Every device in the scenario (scripted and generated) with the id of
    /// the person who starts out carrying it.
    pub fn device_owners(&self) -> Vec<(DeviceId, String)> {
        let mut out = Vec::new();
        for p in &self.people {
            out.extend(p.devices.iter().map(|d| (d.id, p.id.clone())));
        }
        for c in &self.crowds {
            out.extend((0..c.count).map(|i| (c.device_id(i), c.person_id(i))));
        }
        out
    }

    pub fn scanner_address(&self, index: usize) -> DeviceId {
        self.scanners[index]
            .address
            .unwrap_or(DeviceId::from_parts(0x02_0000, index as u32 + 1))
    }

    fn validation_errors(&self) -> Vec<ValidationError> {
        let mut errs = Vec::new();
        let mut range = |field: &str, value: String| {
            errs.push(ValidationError::OutOfRange { field: field.to_string(), value });
        };
        if let Some(f) = self.discoverable_fraction {
            if !(0.0..=1.0).contains(&f) {
                range("discoverable_fraction", f.to_string());
            }
        }
        if !(0.0..=1.0).contains(&self.miss_probability) {
            range("miss_probability", self.miss_probability.to_string());
        }
        if !(self.base_range.is_finite() && self.base_range >= 0.0) {
            range("base_range", self.base_range.to_string());
        }

        let mut sites = BTreeSet::new();
        for s in &self.sites {
            if !sites.insert(s.id.as_str()) {
                errs.push(ValidationError::DuplicateId { kind: "site", id: s.id.clone() });
            }
            if !s.position.iter().all(|v| v.is_finite()) {
                errs.push(ValidationError::OutOfRange {
                    field: format!("sites.{}.position", s.id),
                    value: format!("{:?}", s.position),
                });
            }
        }
        let site_ref = |errs: &mut Vec<ValidationError>, context: String, site: &str| {
            if !sites.contains(site) {
                errs.push(ValidationError::UnknownSite { context, site: site.to_string() });
            }
        };
        for e in &self.edges {
            site_ref(&mut errs, format!("edge {}-{}", e.from, e.to), &e.from);
            site_ref(&mut errs, format!("edge {}-{}", e.from, e.to), &e.to);
        }

        let mut scanner_ids = BTreeSet::new();
        for s in &self.scanners {
            if !scanner_ids.insert(s.id.as_str()) {
                errs.push(ValidationError::DuplicateId { kind: "scanner", id: s.id.clone() });
            }
            site_ref(&mut errs, format!("scanner {}", s.id), &s.site);
            if s.period == 0 {
                errs.push(ValidationError::OutOfRange { field: format!("scanners.{}.period", s.id), value: "0".into() });
            }
            if !(s.range.is_finite() && s.range >= 0.0) {
                errs.push(ValidationError::OutOfRange {
                    field: format!("scanners.{}.range", s.id),
                    value: s.range.to_string(),
                });
            }
        }

        let mut person_ids = BTreeSet::new();
        let mut device_ids: BTreeMap<DeviceId, String> = BTreeMap::new();
        let mut add_device = |errs: &mut Vec<ValidationError>, id: DeviceId, owner: &str| {
            if device_ids.insert(id, owner.to_string()).is_some() {
                errs.push(ValidationError::DuplicateId { kind: "device", id: id.to_string() });
            }
        };
        for (i, _) in self.scanners.iter().enumerate() {
            add_device(&mut errs, self.scanner_address(i), "");
        }
        let check_policy = |errs: &mut Vec<ValidationError>, context: String, p: &Option<PolicyConfig>| {
            if let Some(p) = p {
                if let Err(reason) = p.build(DeviceId::from_parts(0, 0)) {
                    errs.push(ValidationError::Invalid { context, reason });
                }
            }
        };
        for p in &self.people {
            if !person_ids.insert(p.id.clone()) {
                errs.push(ValidationError::DuplicateId { kind: "person", id: p.id.clone() });
            }
            if p.itinerary.is_empty() {
                errs.push(ValidationError::Invalid { context: format!("person {}", p.id), reason: "empty itinerary".into() });
            }
            for w in &p.itinerary {
                site_ref(&mut errs, format!("person {} itinerary", p.id), &w.site);
            }
            if p.itinerary.windows(2).any(|w| w[1].tick < w[0].tick) {
                errs.push(ValidationError::Invalid {
                    context: format!("person {}", p.id),
                    reason: "itinerary ticks must be non-decreasing".into(),
                });
            }
            check_policy(&mut errs, format!("person {} policy", p.id), &p.policy);
            for d in &p.devices {
                add_device(&mut errs, d.id, &p.id);
                let ctx = format!("device {}", d.id);
                if d.class > CLASS_MASK {
                    errs.push(ValidationError::OutOfRange { field: format!("{ctx}.class"), value: format!("{:#x}", d.class) });
                }
                if let Err(e) = FriendlyName::new(d.name.clone()) {
                    errs.push(ValidationError::Invalid { context: ctx.clone(), reason: e.to_string() });
                }
                let unique: BTreeSet<_> = d.services.iter().collect();
                if unique.len() != d.services.len() {
                    errs.push(ValidationError::Invalid { context: ctx.clone(), reason: "duplicate service tags".into() });
                }
                check_policy(&mut errs, format!("{ctx} policy"), &d.policy);
            }
        }
        for c in &self.crowds {
            let ctx = format!("crowd {}", c.prefix);
            if c.oui_value().is_none() {
                errs.push(ValidationError::Invalid { context: ctx, reason: format!("oui {:?} is not 6 hex digits", c.oui) });
                continue;
            }
            if c.class > CLASS_MASK {
                errs.push(ValidationError::OutOfRange { field: format!("{ctx}.class"), value: format!("{:#x}", c.class) });
            }
            if c.route.is_empty() {
                errs.push(ValidationError::Invalid { context: ctx.clone(), reason: "empty route".into() });
            }
            if c.dwell == 0 {
                errs.push(ValidationError::OutOfRange { field: format!("{ctx}.dwell"), value: "0".into() });
            }
            if (c.nic_base as u64 + c.count as u64) > 0xFF_FFFF {
                errs.push(ValidationError::OutOfRange { field: format!("{ctx}.count"), value: c.count.to_string() });
                continue;
            }
            for site in &c.route {
                site_ref(&mut errs, ctx.clone(), site);
            }
            check_policy(&mut errs, format!("{ctx} policy"), &c.policy);
            let name_len = c.name_prefix.chars().count() + 8;
            if name_len > 256 {
                errs.push(ValidationError::Invalid { context: ctx.clone(), reason: "name_prefix too long".into() });
            }
            for i in 0..c.count {
                let pid = c.person_id(i);
                if !person_ids.insert(pid.clone()) {
                    errs.push(ValidationError::DuplicateId { kind: "person", id: pid.clone() });
                }
                add_device(&mut errs, c.device_id(i), &pid);
            }
        }
        debug_assert!(device_ids.keys().all(|d| d.value() <= ID_MASK));

        self.validate_events(&mut errs, &sites, &person_ids, &device_ids);

        for p in &self.pairings {
            let ctx = format!("pairing {}->{}", p.device, p.peer);
            for d in [p.device, p.peer] {
                if !device_ids.get(&d).is_some_and(|owner| !owner.is_empty()) {
                    errs.push(ValidationError::UnknownDevice { context: ctx.clone(), device: d });
                }
            }
            if p.device == p.peer {
                errs.push(ValidationError::Invalid { context: ctx.clone(), reason: "device paired with itself".into() });
            }
            if p.period == 0 {
                errs.push(ValidationError::OutOfRange { field: format!("{ctx}.period"), value: "0".into() });
            }
        }
        errs
    }

    /// Replays ownership through the event list so transfers, discards and
    /// pickups are checked against who actually holds the device.
    fn validate_events(
        &self,
        errs: &mut Vec<ValidationError>,
        sites: &BTreeSet<&str>,
        persons: &BTreeSet<String>,
        devices: &BTreeMap<DeviceId, String>,
    ) {
        #[derive(Clone, PartialEq)]
        enum Holder {
            Person(String),
            Site(String),
        }
        let mut holder: BTreeMap<DeviceId, Holder> = devices
            .iter()
            .filter(|(_, owner)| !owner.is_empty())
            .map(|(d, owner)| (*d, Holder::Person(owner.clone())))
            .collect();
        let mut order: Vec<(usize, &EventConfig)> = self.events.iter().enumerate().collect();
        order.sort_by_key(|(i, e)| (e.tick(), *i));
        for (i, ev) in order {
            let ctx = format!("event #{i} at tick {}", ev.tick());
            let person = |errs: &mut Vec<ValidationError>, p: &str| -> bool {
                let ok = persons.contains(p);
                if !ok {
                    errs.push(ValidationError::UnknownPerson { context: ctx.clone(), person: p.to_string() });
                }
                ok
            };
            let site = |errs: &mut Vec<ValidationError>, s: &str| -> bool {
                let ok = sites.contains(s);
                if !ok {
                    errs.push(ValidationError::UnknownSite { context: ctx.clone(), site: s.to_string() });
                }
                ok
            };
            let device = |errs: &mut Vec<ValidationError>, d: DeviceId| -> bool {
                let ok = holder.contains_key(&d);
                if !ok {
                    errs.push(ValidationError::UnknownDevice { context: ctx.clone(), device: d });
                }
                ok
            };
            let invalid = |errs: &mut Vec<ValidationError>, reason: String| {
                errs.push(ValidationError::Invalid { context: ctx.clone(), reason });
            };
            match ev {
                EventConfig::PointOfSale { person: p, device: d, .. } => {
                    person(errs, p);
                    device(errs, *d);
                }
                EventConfig::Transfer { device: d, from_person, to_person, .. } => {
                    let ok = person(errs, from_person) & person(errs, to_person) & device(errs, *d);
                    if ok {
                        if holder[d] != Holder::Person(from_person.clone()) {
                            invalid(errs, format!("{from_person} does not hold {d} at this tick"));
                        } else {
                            holder.insert(*d, Holder::Person(to_person.clone()));
                        }
                    }
                }
                EventConfig::Discard { device: d, site: s, by_person, .. } => {
                    let ok = person(errs, by_person) & site(errs, s) & device(errs, *d);
                    if ok {
                        if holder[d] != Holder::Person(by_person.clone()) {
                            invalid(errs, format!("{by_person} does not hold {d} at this tick"));
                        } else {
                            holder.insert(*d, Holder::Site(s.clone()));
                        }
                    }
                }
                EventConfig::Pickup { device: d, site: s, by_person, .. } => {
                    let ok = person(errs, by_person) & site(errs, s) & device(errs, *d);
                    if ok {
                        if holder[d] != Holder::Site(s.clone()) {
                            invalid(errs, format!("{d} is not lying at {s} at this tick"));
                        } else {
                            holder.insert(*d, Holder::Person(by_person.clone()));
                        }
                    }
                }
                EventConfig::Incident { site: s, .. } => {
                    site(errs, s);
                }
            }
        }
    }
}

pub fn device_class(raw: u32) -> DeviceClass {
    DeviceClass::new(raw & CLASS_MASK).expect("masked to 24 bits")
}
