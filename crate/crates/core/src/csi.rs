//! Salted, hashed storage of sightings for investigative use: match a known
//! device against the log, list who was around an incident, and guess
//! habitual roles from appearance patterns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::btstack::Tick;
use crate::model::{DeviceClass, DeviceId, FriendlyName};
use crate::rng::mix_once;
use crate::trace::Sighting;

pub const TICKS_PER_HOUR: Tick = 3600;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashedId(pub u64);

impl fmt::Display for HashedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for HashedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashedId({self})")
    }
}

impl FromStr for HashedId {
    type Err = CsiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(CsiError::BadDigest(s.to_owned()));
        }
        u64::from_str_radix(s, 16).map(HashedId).map_err(|_| CsiError::BadDigest(s.to_owned()))
    }
}

impl Serialize for HashedId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HashedId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsiError {
    #[error("window start {t0} is after its end {t1}")]
    BadWindow { t0: Tick, t1: Tick },
    #[error("{0:?} is not a 16-digit hex digest")]
    BadDigest(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid role rules: {0}")]
    Rules(String),
}

/// One application of the run mixer to `salt ^ id`.
pub fn hash_id(id: DeviceId, salt: u64) -> HashedId {
    HashedId(mix_once(salt ^ id.value()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "hashed-sighting")]
pub struct StoreRow {
    pub tick: Tick,
    pub digest: HashedId,
    pub scanner_id: String,
    pub class: DeviceClass,
    pub name: FriendlyName,
}

/// Write-once store of hashed sightings. The salt stays in memory only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStore {
    salt: u64,
    rows: Vec<StoreRow>,
    by_digest: BTreeMap<HashedId, Vec<usize>>,
    by_scanner: BTreeMap<(String, Tick), Vec<usize>>,
}

impl TraceStore {
    fn from_rows(salt: u64, mut rows: Vec<StoreRow>) -> Self {
        rows.sort_by_key(|r| r.tick);
        let mut by_digest: BTreeMap<HashedId, Vec<usize>> = BTreeMap::new();
        let mut by_scanner: BTreeMap<(String, Tick), Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            by_digest.entry(r.digest).or_default().push(i);
            by_scanner.entry((r.scanner_id.clone(), r.tick)).or_default().push(i);
        }
        Self { salt, rows, by_digest, by_scanner }
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    pub fn rows(&self) -> &[StoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subjects(&self) -> impl Iterator<Item = HashedId> + '_ {
        self.by_digest.keys().copied()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("rows serialize"));
            out.push('\n');
        }
        out
    }

    /// Reads `hashed-sighting` lines; `salt` must be supplied separately.
    pub fn parse_jsonl(text: &str, salt: u64) -> Result<Self, CsiError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: StoreRow =
                serde_json::from_str(line).map_err(|e| CsiError::Parse { line: i + 1, message: e.to_string() })?;
            rows.push(row);
        }
        Ok(Self::from_rows(salt, rows))
    }
}

pub fn ingest(sightings: &[Sighting], salt: u64) -> TraceStore {
    let rows = sightings
        .iter()
        .map(|s| StoreRow {
            tick: s.tick,
            digest: hash_id(s.observed_id, salt),
            scanner_id: s.scanner_id.clone(),
            class: s.observed_class,
            name: s.observed_name.clone(),
        })
        .collect();
    TraceStore::from_rows(salt, rows)
}

pub fn match_candidate(candidate: DeviceId, store: &TraceStore) -> Vec<&StoreRow> {
    let digest = hash_id(candidate, store.salt);
    store.by_digest.get(&digest).into_iter().flatten().map(|&i| &store.rows[i]).collect()
}

/// Distinct subjects seen by `scanner_id` within the closed interval `[t0, t1]`.
pub fn presence_window(store: &TraceStore, scanner_id: &str, t0: Tick, t1: Tick) -> Result<Vec<HashedId>, CsiError> {
    if t0 > t1 {
        return Err(CsiError::BadWindow { t0, t1 });
    }
    let lo = (scanner_id.to_owned(), t0);
    let hi = (scanner_id.to_owned(), t1);
    let ids: BTreeSet<HashedId> = store
        .by_scanner
        .range(lo..=hi)
        .flat_map(|(_, rows)| rows.iter().map(|&i| store.rows[i].digest))
        .collect();
    Ok(ids.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceFeatures {
    pub subject: HashedId,
    pub n_sightings: u32,
    pub n_distinct_scanners: u32,
    pub hour_histogram: [u32; 24],
    pub night_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoleRules {
    pub night_start: u8,
    pub night_end: u8,
    pub min_sightings: u32,
    pub min_scanners_rover: u32,
    pub night_fraction_cutoff: f64,
}

impl Default for RoleRules {
    fn default() -> Self {
        Self { night_start: 22, night_end: 3, min_sightings: 10, min_scanners_rover: 3, night_fraction_cutoff: 0.9 }
    }
}

impl RoleRules {
    pub fn validate(&self) -> Result<(), CsiError> {
        if self.night_start >= 24 || self.night_end >= 24 {
            return Err(CsiError::Rules(format!("hours must be below 24, got [{}, {})", self.night_start, self.night_end)));
        }
        if self.min_sightings == 0 || self.min_scanners_rover == 0 {
            return Err(CsiError::Rules("thresholds must be positive".into()));
        }
        if !(self.night_fraction_cutoff > 0.0 && self.night_fraction_cutoff <= 1.0) {
            return Err(CsiError::Rules(format!("night fraction cutoff {} outside (0, 1]", self.night_fraction_cutoff)));
        }
        Ok(())
    }

    /// Whether `hour` falls in `[night_start, night_end)`, wrapping at midnight.
    pub fn is_night(&self, hour: u8) -> bool {
        let (s, e) = (self.night_start, self.night_end);
        if s <= e {
            (s..e).contains(&hour)
        } else {
            hour >= s || hour < e
        }
    }
}

pub fn appearance_features(store: &TraceStore, subject: HashedId, ticks_per_hour: Tick, rules: &RoleRules) -> AppearanceFeatures {
    let per_hour = ticks_per_hour.max(1);
    let mut hist = [0u32; 24];
    let mut scanners = BTreeSet::new();
    let mut n = 0u32;
    for &i in store.by_digest.get(&subject).into_iter().flatten() {
        let row = &store.rows[i];
        hist[((row.tick / per_hour) % 24) as usize] += 1;
        scanners.insert(row.scanner_id.as_str());
        n += 1;
    }
    let night: u32 = (0..24u8).filter(|&h| rules.is_night(h)).map(|h| hist[h as usize]).sum();
    AppearanceFeatures {
        subject,
        n_sightings: n,
        n_distinct_scanners: scanners.len() as u32,
        hour_histogram: hist,
        night_fraction: if n == 0 { 0.0 } else { f64::from(night) / f64::from(n) },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoleLabel {
    FixedSiteFrequenter,
    NocturnalRover,
    Transient,
    Unclassified,
}

pub fn classify_role(f: &AppearanceFeatures, rules: &RoleRules) -> RoleLabel {
    let enough = f.n_sightings >= rules.min_sightings;
    if enough && f.n_distinct_scanners == 1 {
        RoleLabel::FixedSiteFrequenter
    } else if enough && f.n_distinct_scanners >= rules.min_scanners_rover && f.night_fraction >= rules.night_fraction_cutoff {
        RoleLabel::NocturnalRover
    } else if !enough {
        RoleLabel::Transient
    } else {
        RoleLabel::Unclassified
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn sighting(tick: Tick, scanner: &str, id: DeviceId) -> Sighting {
        Sighting {
            tick,
            scanner_id: scanner.into(),
            observed_id: id,
            observed_class: DeviceClass::of_major(7),
            observed_name: FriendlyName::new("unit").unwrap(),
        }
    }

    #[test]
    fn digest_reference_values() {
        assert_eq!(hash_id(DeviceId::from_parts(0, 0), 0), HashedId(0xE220A8397B1DCDAF));
        let id = "0A:1B:2C:00:00:01".parse().unwrap();
        assert_eq!(hash_id(id, 0x1234).to_string(), "457b6ef0e4152026");
        assert_eq!(hash_id(id, 0x1234), hash_id(id, 0x1234));
    }

    #[test]
    fn salts_separate() {
        let id = DeviceId::from_parts(0xABCDEF, 42);
        let mut rng = SplitMix64::new(3);
        for _ in 0..10_000 {
            let (a, b) = (rng.next_u64(), rng.next_u64());
            if a != b {
                assert_ne!(hash_id(id, a), hash_id(id, b));
            }
        }
    }

    #[test]
    fn digest_text_round_trip() {
        let h = HashedId(0x00ff);
        assert_eq!(h.to_string(), "00000000000000ff");
        assert_eq!("00000000000000ff".parse::<HashedId>().unwrap(), h);
        assert!("ff".parse::<HashedId>().is_err());
    }

    #[test]
    fn ingest_and_match() {
        assert!(ingest(&[], 1).is_empty());
        let d = DeviceId::from_parts(0x0A1B2C, 1);
        let other = DeviceId::from_parts(0x0A1B2C, 2);
        let log = [sighting(120, "A", d), sighting(60, "B", d), sighting(60, "A", other)];
        let store = ingest(&log, 99);
        assert_eq!(store.len(), 3);
        let rows = match_candidate(d, &store);
        assert_eq!(rows.iter().map(|r| r.tick).collect::<Vec<_>>(), vec![60, 120]);
        assert!(match_candidate(DeviceId::from_parts(1, 1), &store).is_empty());
        let other_salt = ingest(&log, 100);
        assert!(match_candidate(d, &other_salt).iter().all(|r| r.digest != hash_id(d, 99)));
    }

    #[test]
    fn store_text_has_no_raw_ids() {
        let d = DeviceId::from_parts(0x0A1B2C, 1);
        let store = ingest(&[sighting(60, "A", d)], 7);
        let text = store.to_jsonl();
        assert!(!text.contains(&d.to_string()));
        assert!(!text.contains("0A1B2C") && !text.contains("0a1b2c"));
        assert!(text.starts_with(r#"{"kind":"hashed-sighting","tick":60,"digest":""#));
        assert_eq!(TraceStore::parse_jsonl(&text, 7).unwrap(), store);
    }

    #[test]
    fn windows_are_closed() {
        let ids: Vec<DeviceId> = (1..=4).map(|n| DeviceId::from_parts(5, n)).collect();
        let log = [sighting(100, "A", ids[0]), sighting(110, "A", ids[1]), sighting(120, "A", ids[2]), sighting(115, "B", ids[3])];
        let store = ingest(&log, 1);
        let mut expect: Vec<HashedId> = ids[..3].iter().map(|&d| hash_id(d, 1)).collect();
        expect.sort();
        assert_eq!(presence_window(&store, "A", 100, 120).unwrap(), expect);
        assert!(presence_window(&store, "A", 0, 99).unwrap().is_empty());
        assert_eq!(presence_window(&store, "A", 110, 110).unwrap(), vec![hash_id(ids[1], 1)]);
        assert!(matches!(presence_window(&store, "A", 5, 4), Err(CsiError::BadWindow { .. })));
    }

    #[test]
    fn night_window_wraps() {
        let r = RoleRules::default();
        let night: Vec<u8> = (0..24).filter(|&h| r.is_night(h)).collect();
        assert_eq!(night, vec![0, 1, 2, 22, 23]);
    }

    #[test]
    fn features_and_roles() {
        let rules = RoleRules::default();
        let cab = DeviceId::from_parts(0x001122, 1);
        let sweeper = DeviceId::from_parts(0x001122, 2);
        let passer = DeviceId::from_parts(0x001122, 3);
        let mut log: Vec<Sighting> = (0..12).map(|i| sighting(i * 2 * 3600 + 60, "rank", cab)).collect();
        for night in 0..3u64 {
            for (k, h) in [22u64, 23, 0, 1, 2].into_iter().enumerate() {
                let day = night + u64::from(h < 12);
                log.push(sighting(day * 86_400 + h * 3600 + 600, ["A", "B", "C", "D"][k % 4], sweeper));
            }
        }
        log.push(sighting(50, "A", passer));
        log.push(sighting(70, "B", passer));
        let store = ingest(&log, 5);

        let f = appearance_features(&store, hash_id(cab, 5), TICKS_PER_HOUR, &rules);
        assert_eq!((f.n_sightings, f.n_distinct_scanners), (12, 1));
        assert_eq!(f.hour_histogram.iter().sum::<u32>(), 12);
        assert_eq!(classify_role(&f, &rules), RoleLabel::FixedSiteFrequenter);

        let f = appearance_features(&store, hash_id(sweeper, 5), TICKS_PER_HOUR, &rules);
        assert_eq!(f.night_fraction, 1.0);
        assert_eq!(classify_role(&f, &rules), RoleLabel::NocturnalRover);

        let f = appearance_features(&store, hash_id(passer, 5), TICKS_PER_HOUR, &rules);
        assert_eq!(classify_role(&f, &rules), RoleLabel::Transient);

        let none = appearance_features(&store, HashedId(1), TICKS_PER_HOUR, &rules);
        assert_eq!((none.n_sightings, none.night_fraction), (0, 0.0));
    }

    #[test]
    fn rules_validation() {
        assert!(RoleRules::default().validate().is_ok());
        assert!(RoleRules { night_start: 24, ..Default::default() }.validate().is_err());
        assert!(RoleRules { min_sightings: 0, ..Default::default() }.validate().is_err());
    }
}
