use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::btstack::Tick;
use crate::model::DeviceId;

/// One sale: the buyer's identity was captured together with the device id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PosRecord {
    pub device: DeviceId,
    pub name: String,
    pub seller: String,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pos line {line}: {reason}")]
pub struct PosParseError {
    pub line: usize,
    pub reason: String,
}

/// A retailer's sales ledger keyed by device identifier.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PosDatabase {
    records: Vec<PosRecord>,
    by_device: BTreeMap<DeviceId, Vec<usize>>,
}

impl PosDatabase {
    pub fn new(records: impl IntoIterator<Item = PosRecord>) -> Self {
        let mut records: Vec<PosRecord> = records.into_iter().collect();
        records.sort_by(|a, b| (a.tick, a.device).cmp(&(b.tick, b.device)));
        records.dedup();
        let mut by_device: BTreeMap<DeviceId, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_device.entry(r.device).or_default().push(i);
        }
        Self { records, by_device }
    }

    pub fn records(&self) -> &[PosRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// All sales of `device`, earliest first.
    pub fn sales(&self, device: DeviceId) -> impl Iterator<Item = &PosRecord> {
        self.by_device.get(&device).into_iter().flatten().map(|&i| &self.records[i])
    }

    /// The first recorded buyer of `device`.
    pub fn original_purchaser(&self, device: DeviceId) -> Option<&PosRecord> {
        self.sales(device).next()
    }

    /// Tab-separated `id name seller tick`, one sale per line. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse_tsv(text: &str) -> Result<Self, PosParseError> {
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| PosParseError { line: idx + 1, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, name, seller, tick] = fields[..] else {
                return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
            };
            let device = id.trim().parse::<DeviceId>().map_err(|e| err(e.to_string()))?;
            let tick = tick.trim().parse::<Tick>().map_err(|e| err(format!("tick: {e}")))?;
            records.push(PosRecord { device, name: name.to_owned(), seller: seller.to_owned(), tick });
        }
        Ok(Self::new(records))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# id\tname\tseller\ttick\n");
        for r in &self.records {
            writeln!(out, "{}\t{}\t{}\t{}", r.device, r.name, r.seller, r.tick).expect("string write");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let db = PosDatabase::new([
            PosRecord { device: DeviceId::from_parts(1, 2), name: "Alice".into(), seller: "shop".into(), tick: 5 },
            PosRecord { device: DeviceId::from_parts(1, 3), name: "Bob".into(), seller: "shop".into(), tick: 1 },
        ]);
        let text = db.to_tsv();
        assert_eq!(PosDatabase::parse_tsv(&text).unwrap(), db);
        assert_eq!(db.records()[0].name, "Bob");
    }

    #[test]
    fn earliest_sale_wins() {
        let d = DeviceId::from_parts(7, 7);
        let db = PosDatabase::new([
            PosRecord { device: d, name: "second".into(), seller: "s".into(), tick: 90 },
            PosRecord { device: d, name: "first".into(), seller: "s".into(), tick: 10 },
        ]);
        assert_eq!(db.original_purchaser(d).unwrap().name, "first");
        assert!(db.original_purchaser(DeviceId::from_parts(0, 1)).is_none());
    }

    #[test]
    fn malformed_lines() {
        let e = PosDatabase::parse_tsv("# header\n00:00:00:00:00:01\tA\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(PosDatabase::parse_tsv("zz\tA\tB\t1").is_err());
        assert!(PosDatabase::parse_tsv("00:00:00:00:00:01\tA\tB\t-1").is_err());
    }
}
