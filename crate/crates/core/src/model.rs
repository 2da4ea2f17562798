//! Identifier, class and name types shared by the simulator, the attacks and
//! the trace store, plus the manufacturer and value lookup tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const ID_MASK: u64 = (1 << 48) - 1;
pub const CLASS_MASK: u32 = (1 << 24) - 1;
pub const MAX_NAME_CHARS: usize = 256;
pub const UNKNOWN_MANUFACTURER: &str = "unknown";

/// Monetary value in whole currency units.
pub type Value = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid device id at position {position}: {reason}")]
pub struct ParseIdError {
    pub position: usize,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("device id {0:#x} exceeds 48 bits")]
    IdOutOfRange(u64),
    #[error("device class {0:#x} exceeds 24 bits")]
    ClassOutOfRange(u32),
    #[error("friendly name has {0} characters, limit is 256")]
    NameTooLong(usize),
    #[error("duplicate service tag {0:?}")]
    DuplicateService(String),
    #[error("line {line}: {reason}")]
    Table { line: usize, reason: String },
}

/// 48-bit device address. The high 24 bits are the manufacturer prefix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DeviceId(u64);

impl DeviceId {
    pub fn new(value: u64) -> Result<Self, ModelError> {
        if value > ID_MASK {
            return Err(ModelError::IdOutOfRange(value));
        }
        Ok(Self(value))
    }

    /// Keeps the low 48 bits.
    pub const fn truncate(value: u64) -> Self {
        Self(value & ID_MASK)
    }

    pub const fn from_parts(oui: u32, nic: u32) -> Self {
        Self((((oui & CLASS_MASK) as u64) << 24) | (nic & CLASS_MASK) as u64)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn oui(self) -> u32 {
        (self.0 >> 24) as u32
    }

    pub const fn nic(self) -> u32 {
        (self.0 & 0xFF_FFFF) as u32
    }
}

/// Parses the colon-separated six-octet form. Hex digits may be either case.
pub fn parse_device_id(text: &str) -> Result<DeviceId, ParseIdError> {
    let bytes = text.as_bytes();
    let mut value = 0u64;
    for octet in 0..6 {
        let base = octet * 3;
        for pos in base..base + 2 {
            let Some(&b) = bytes.get(pos) else {
                return Err(ParseIdError { position: pos, reason: "input too short" });
            };
            let digit = (b as char)
                .to_digit(16)
                .ok_or(ParseIdError { position: pos, reason: "expected hex digit" })?;
            value = (value << 4) | digit as u64;
        }
        if octet < 5 {
            match bytes.get(base + 2) {
                Some(b':') => {}
                Some(_) => {
                    return Err(ParseIdError { position: base + 2, reason: "expected ':'" })
                }
                None => {
                    return Err(ParseIdError { position: base + 2, reason: "input too short" })
                }
            }
        }
    }
    if bytes.len() > 17 {
        return Err(ParseIdError { position: 17, reason: "trailing characters" });
    }
    Ok(DeviceId(value))
}

pub fn format_device_id(id: DeviceId) -> String {
    id.to_string()
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0.to_be_bytes();
        write!(f, "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}", b[2], b[3], b[4], b[5], b[6], b[7])
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({self})")
    }
}

impl FromStr for DeviceId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_device_id(s)
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_device_id(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MajorClass {
    Misc,
    Computer,
    Phone,
    Lan,
    AudioVideo,
    Peripheral,
    Imaging,
    SatNav,
    Other,
}

impl MajorClass {
    pub const ALL: [MajorClass; 9] = [
        MajorClass::Misc,
        MajorClass::Computer,
        MajorClass::Phone,
        MajorClass::Lan,
        MajorClass::AudioVideo,
        MajorClass::Peripheral,
        MajorClass::Imaging,
        MajorClass::SatNav,
        MajorClass::Other,
    ];

    pub fn from_code(code: u32) -> Self {
        match code {
            0 => MajorClass::Misc,
            1 => MajorClass::Computer,
            2 => MajorClass::Phone,
            3 => MajorClass::Lan,
            4 => MajorClass::AudioVideo,
            5 => MajorClass::Peripheral,
            6 => MajorClass::Imaging,
            7 => MajorClass::SatNav,
            _ => MajorClass::Other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MajorClass::Misc => "Misc",
            MajorClass::Computer => "Computer",
            MajorClass::Phone => "Phone",
            MajorClass::Lan => "Lan",
            MajorClass::AudioVideo => "AudioVideo",
            MajorClass::Peripheral => "Peripheral",
            MajorClass::Imaging => "Imaging",
            MajorClass::SatNav => "SatNav",
            MajorClass::Other => "Other",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for MajorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// 24-bit class-of-device word. Only the major class (bits 8..12) is
/// interpreted; minor and service bits are carried opaquely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct DeviceClass(u32);

impl DeviceClass {
    pub fn new(value: u32) -> Result<Self, ModelError> {
        if value > CLASS_MASK {
            return Err(ModelError::ClassOutOfRange(value));
        }
        Ok(Self(value))
    }

    /// Class word with only the major bits set.
    pub const fn of_major(code: u32) -> Self {
        Self((code & 0x1F) << 8)
    }

    pub const fn value(self) -> u32 {
        self.0
    }

    pub fn major(self) -> MajorClass {
        major_class_of(self)
    }
}

impl<'de> Deserialize<'de> for DeviceClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = u32::deserialize(deserializer)?;
        DeviceClass::new(v).map_err(serde::de::Error::custom)
    }
}

pub fn major_class_of(class: DeviceClass) -> MajorClass {
    MajorClass::from_code((class.0 >> 8) & 0x1F)
}

/// User-visible device name, at most 256 characters.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct FriendlyName(String);

impl FriendlyName {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        let n = text.chars().count();
        if n > MAX_NAME_CHARS {
            return Err(ModelError::NameTooLong(n));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FriendlyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for FriendlyName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FriendlyName::new(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibilityMode {
    Off,
    Stealth,
    Discoverable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceDescriptor {
    pub id: DeviceId,
    pub class: DeviceClass,
    pub name: FriendlyName,
    pub mode: VisibilityMode,
    services: Vec<String>,
    pub value_hint: Option<Value>,
}

impl DeviceDescriptor {
    pub fn new(
        id: DeviceId,
        class: DeviceClass,
        name: FriendlyName,
        mode: VisibilityMode,
        services: Vec<String>,
    ) -> Result<Self, ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &services {
            if !seen.insert(s.as_str()) {
                return Err(ModelError::DuplicateService(s.clone()));
            }
        }
        Ok(Self { id, class, name, mode, services, value_hint: None })
    }

    /// Bare descriptor for a device known only by id and class, as an
    /// observer reconstructs it from a sighting.
    pub fn observed(id: DeviceId, class: DeviceClass) -> Self {
        Self {
            id,
            class,
            name: FriendlyName::default(),
            mode: VisibilityMode::Discoverable,
            services: Vec::new(),
            value_hint: None,
        }
    }

    pub fn with_value_hint(mut self, hint: Option<Value>) -> Self {
        self.value_hint = hint;
        self
    }

    pub fn services(&self) -> &[String] {
        &self.services
    }
}

/// Manufacturer prefix table. Misses resolve to `"unknown"`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OuiTable {
    entries: BTreeMap<u32, String>,
}

impl OuiTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, oui: u32, name: impl Into<String>) -> Result<(), ModelError> {
        if oui > CLASS_MASK {
            return Err(ModelError::Table { line: 0, reason: format!("oui {oui:#x} exceeds 24 bits") });
        }
        self.entries.insert(oui, name.into());
        Ok(())
    }

    pub fn lookup(&self, oui: u32) -> &str {
        self.entries.get(&oui).map(String::as_str).unwrap_or(UNKNOWN_MANUFACTURER)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `<6 hex digits> <name>` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut table = Self::new();
        for (idx, line) in content_lines(text) {
            let (prefix, name) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| table_err(idx, "expected `<oui> <name>`"))?;
            let name = name.trim();
            if prefix.len() != 6 || !prefix.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(table_err(idx, "oui must be exactly 6 hex digits"));
            }
            if name.is_empty() {
                return Err(table_err(idx, "missing manufacturer name"));
            }
            let oui = u32::from_str_radix(prefix, 16).map_err(|_| table_err(idx, "bad hex"))?;
            table.entries.insert(oui, name.to_string());
        }
        Ok(table)
    }
}

impl FromIterator<(u32, String)> for OuiTable {
    fn from_iter<T: IntoIterator<Item = (u32, String)>>(iter: T) -> Self {
        Self { entries: iter.into_iter().map(|(k, v)| (k & CLASS_MASK, v)).collect() }
    }
}

pub fn manufacturer_of(id: DeviceId, table: &OuiTable) -> &str {
    table.lookup(id.oui())
}

/// Price list keyed by (major class, manufacturer). Misses are worth 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValueTable {
    entries: BTreeMap<(MajorClass, String), Value>,
}

impl ValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, major: MajorClass, manufacturer: impl Into<String>, value: Value) {
        self.entries.insert((major, manufacturer.into()), value);
    }

    pub fn get(&self, major: MajorClass, manufacturer: &str) -> Value {
        // BTreeMap<(_, String)> can't be probed with &str without allocating.
        self.entries.get(&(major, manufacturer.to_string())).copied().unwrap_or(0)
    }

    /// Parses `<major-class-name> <manufacturer> <integer value>` lines. The
    /// manufacturer may contain spaces; the value is the last token.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut table = Self::new();
        for (idx, line) in content_lines(text) {
            let (major, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| table_err(idx, "expected `<class> <manufacturer> <value>`"))?;
            let (manufacturer, value) = rest
                .trim()
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| table_err(idx, "expected `<class> <manufacturer> <value>`"))?;
            let major = MajorClass::from_name(major)
                .ok_or_else(|| table_err(idx, &format!("unknown major class {major:?}")))?;
            let value: Value = value
                .parse()
                .map_err(|_| table_err(idx, "value must be a non-negative integer"))?;
            let manufacturer = manufacturer.trim();
            if manufacturer.is_empty() {
                return Err(table_err(idx, "missing manufacturer"));
            }
            table.insert(major, manufacturer, value);
        }
        Ok(table)
    }
}

pub fn device_value(desc: &DeviceDescriptor, oui: &OuiTable, values: &ValueTable) -> Value {
    if let Some(hint) = desc.value_hint {
        return hint;
    }
    values.get(desc.class.major(), manufacturer_of(desc.id, oui))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then_some((i + 1, l))
    })
}

fn table_err(line: usize, reason: &str) -> ModelError {
    ModelError::Table { line, reason: reason.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_extremes() {
        assert_eq!(parse_device_id("00:00:00:00:00:00").unwrap().value(), 0);
        assert_eq!(parse_device_id("FF:FF:FF:FF:FF:FF").unwrap().value(), ID_MASK);
        assert_eq!(parse_device_id("ff:ff:ff:ff:ff:ff").unwrap().to_string(), "FF:FF:FF:FF:FF:FF");
    }

    #[test]
    fn parse_splits_prefix() {
        // 0x0A1B2C000001: high 24 bits 0x0A1B2C, low 24 bits 0x000001
        let id = parse_device_id("0A:1B:2C:00:00:01").unwrap();
        assert_eq!(id.oui(), 0x0A1B2C);
        assert_eq!(id.nic(), 0x000001);
        assert_eq!(id.value(), 0x0A1B_2C00_0001);
    }

    #[test]
    fn parse_reports_position() {
        assert_eq!(parse_device_id("0A:1B:2C:00:00").unwrap_err().position, 14);
        assert_eq!(parse_device_id("0A-1B:2C:00:00:01").unwrap_err().position, 2);
        assert_eq!(parse_device_id("0A:1G:2C:00:00:01").unwrap_err().position, 4);
        assert_eq!(parse_device_id("0A:1B:2C:00:00:011").unwrap_err().position, 17);
        assert_eq!(parse_device_id("").unwrap_err().position, 0);
        assert!(parse_device_id("0A:1B:2C:00:00:0é").is_err());
    }

    #[test]
    fn major_class_decoding() {
        assert_eq!(major_class_of(DeviceClass::new(0x000200).unwrap()), MajorClass::Phone);
        assert_eq!(major_class_of(DeviceClass::new(0).unwrap()), MajorClass::Misc);
        assert_eq!(major_class_of(DeviceClass::new(0x001F00).unwrap()), MajorClass::Other);
        assert_eq!(major_class_of(DeviceClass::new(0x5A020C).unwrap()), MajorClass::Phone);
        assert!(DeviceClass::new(1 << 24).is_err());
    }

    #[test]
    fn manufacturer_lookup() {
        let id = DeviceId::from_parts(0x0A1B2C, 7);
        let mut t = OuiTable::new();
        assert_eq!(manufacturer_of(id, &t), "unknown");
        t.insert(0x0A1B2C, "AcmePhone").unwrap();
        assert_eq!(manufacturer_of(id, &t), "AcmePhone");
        let mut other = OuiTable::new();
        other.insert(0x000002, "X").unwrap();
        assert_eq!(manufacturer_of(DeviceId::from_parts(1, 0), &other), "unknown");
    }

    fn phone() -> DeviceDescriptor {
        DeviceDescriptor::new(
            DeviceId::from_parts(0x0A1B2C, 1),
            DeviceClass::of_major(2),
            FriendlyName::new("p").unwrap(),
            VisibilityMode::Discoverable,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn value_lookup_order() {
        let oui: OuiTable = [(0x0A1B2C, "AcmePhone".to_string())].into_iter().collect();
        let mut values = ValueTable::new();
        assert_eq!(device_value(&phone(), &oui, &values), 0);
        values.insert(MajorClass::Phone, "AcmePhone", 250);
        assert_eq!(device_value(&phone(), &oui, &values), 250);
        assert_eq!(device_value(&phone().with_value_hint(Some(300)), &oui, &values), 300);
    }

    #[test]
    fn name_limit() {
        assert!(FriendlyName::new("x".repeat(256)).is_ok());
        assert!(matches!(FriendlyName::new("é".repeat(257)), Err(ModelError::NameTooLong(257))));
    }

    #[test]
    fn duplicate_services_rejected() {
        let r = DeviceDescriptor::new(
            DeviceId::default(),
            DeviceClass::default(),
            FriendlyName::default(),
            VisibilityMode::Off,
            vec!["obex".into(), "obex".into()],
        );
        assert!(matches!(r, Err(ModelError::DuplicateService(_))));
    }

    #[test]
    fn table_files() {
        let oui = OuiTable::parse("# vendors\n\n0a1b2c AcmePhone\n001122 Sony Ericsson\n").unwrap();
        assert_eq!(oui.lookup(0x001122), "Sony Ericsson");
        assert_eq!(oui.lookup(0x0A1B2C), "AcmePhone");
        assert!(OuiTable::parse("0A1B2 Acme").is_err());
        assert!(OuiTable::parse("0A1B2C").is_err());

        let v = ValueTable::parse("Phone AcmePhone 250\nsatnav Road King 400 \n# x\n").unwrap();
        assert_eq!(v.get(MajorClass::Phone, "AcmePhone"), 250);
        assert_eq!(v.get(MajorClass::SatNav, "Road King"), 400);
        assert!(ValueTable::parse("Phone Acme -3").is_err());
        assert!(ValueTable::parse("Toaster Acme 3").is_err());
    }

    proptest! {
        #[test]
        fn id_text_round_trip(v in 0u64..=ID_MASK) {
            let id = DeviceId::new(v).unwrap();
            let text = format_device_id(id);
            prop_assert_eq!(parse_device_id(&text).unwrap(), id);
            prop_assert_eq!(parse_device_id(&text.to_lowercase()).unwrap().to_string(), text);
        }

        #[test]
        fn major_depends_only_on_major_bits(v in 0u32..=CLASS_MASK, noise in 0u32..=CLASS_MASK) {
            let keep = 0x1F << 8;
            let w = (v & keep) | (noise & !keep & CLASS_MASK);
            prop_assert_eq!(
                major_class_of(DeviceClass::new(v).unwrap()),
                major_class_of(DeviceClass::new(w).unwrap())
            );
        }

        #[test]
        fn value_monotone_in_table(extra in 0u64..10_000, base in 0u64..10_000) {
            let oui: OuiTable = [(0x0A1B2C, "AcmePhone".to_string())].into_iter().collect();
            let mut values = ValueTable::new();
            values.insert(MajorClass::Computer, "AcmePhone", base);
            let before = device_value(&phone(), &oui, &values);
            values.insert(MajorClass::Phone, "AcmePhone", extra);
            prop_assert!(device_value(&phone(), &oui, &values) >= before);
        }
    }
}
