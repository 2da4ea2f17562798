//! Line-delimited JSON trace format shared by the simulator, the attacks and
//! the case-study store.
//!
//! Every line is one object with a `kind` tag and a `tick`. A simulator run
//! writes one `meta` line, then all records ordered by tick; within a tick
//! truth records come first, then page hits, then sightings. External logs
//! may contain only `sighting` lines.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::btstack::Tick;
use crate::model::{DeviceClass, DeviceId, FriendlyName};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub tick: Tick,
    pub scanner_id: String,
    pub observed_id: DeviceId,
    pub observed_class: DeviceClass,
    pub observed_name: FriendlyName,
}

/// Successful directed page of a known identifier by a scanner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageHit {
    pub tick: Tick,
    pub scanner_id: String,
    pub target_id: DeviceId,
    pub services: Vec<String>,
}

/// What really happened. Only the evaluator reads these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TruthKind {
    /// Roster entry, emitted once per person at tick 0.
    Person { person: String, name: String, role: String },
    /// Initial carrier of a device, emitted at tick 0.
    Carry { person: String, device: DeviceId, class: DeviceClass },
    /// The device was radio-reachable from the scanner at a scan tick,
    /// whatever its visibility mode. `wire_id` is what it was transmitting.
    Presence { scanner_id: String, device: DeviceId, wire_id: DeviceId },
    PointOfSale { person: String, device: DeviceId, seller: String },
    Transfer { device: DeviceId, from_person: String, to_person: String },
    Discard { device: DeviceId, site: String, by_person: String },
    Pickup { device: DeviceId, site: String, by_person: String },
    Incident { site: String, scanners: Vec<String> },
    /// A paired device tried to page its peer while the peer was in range.
    PeerPage { device: DeviceId, peer: DeviceId, reached: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub tick: Tick,
    #[serde(flatten)]
    pub kind: TruthKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub tick: Tick,
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceLine {
    Meta(TraceMeta),
    Truth(GroundTruthEvent),
    Page(PageHit),
    Sighting(Sighting),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate meta record")]
    DuplicateMeta { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceBundle {
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub sightings: Vec<Sighting>,
    pub pages: Vec<PageHit>,
    pub truth: Vec<GroundTruthEvent>,
}

impl TraceBundle {
    pub fn has_truth(&self) -> bool {
        !self.truth.is_empty()
    }

    /// Restores tick order on every list without disturbing same-tick order.
    pub fn normalize(&mut self) {
        self.sightings.sort_by_key(|s| s.tick);
        self.pages.sort_by_key(|p| p.tick);
        self.truth.sort_by_key(|t| t.tick);
    }

    /// Copy with the ground truth removed, as an attacker would hold it.
    pub fn without_truth(&self) -> TraceBundle {
        TraceBundle { truth: Vec::new(), ..self.clone() }
    }

    pub fn lines(&self) -> Vec<TraceLine> {
        let mut out = Vec::with_capacity(1 + self.sightings.len() + self.pages.len() + self.truth.len());
        if let (Some(digest), Some(seed)) = (&self.config_digest, self.seed) {
            out.push(TraceLine::Meta(TraceMeta { tick: 0, config_digest: digest.clone(), seed }));
        }
        let (mut t, mut p, mut s) = (0, 0, 0);
        loop {
            let next = [
                self.truth.get(t).map(|e| e.tick),
                self.pages.get(p).map(|e| e.tick),
                self.sightings.get(s).map(|e| e.tick),
            ];
            let Some(tick) = next.iter().flatten().min().copied() else { break };
            while self.truth.get(t).is_some_and(|e| e.tick == tick) {
                out.push(TraceLine::Truth(self.truth[t].clone()));
                t += 1;
            }
            while self.pages.get(p).is_some_and(|e| e.tick == tick) {
                out.push(TraceLine::Page(self.pages[p].clone()));
                p += 1;
            }
            while self.sightings.get(s).is_some_and(|e| e.tick == tick) {
                out.push(TraceLine::Sighting(self.sightings[s].clone()));
                s += 1;
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses a trace. Blank lines are skipped; records are re-sorted by tick.
    pub fn parse_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut bundle = TraceBundle::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceLine = serde_json::from_str(line)
                .map_err(|e| TraceError::Parse { line: idx + 1, message: e.to_string() })?;
            match record {
                TraceLine::Meta(m) => {
                    if bundle.config_digest.is_some() {
                        return Err(TraceError::DuplicateMeta { line: idx + 1 });
                    }
                    bundle.config_digest = Some(m.config_digest);
                    bundle.seed = Some(m.seed);
                }
                TraceLine::Truth(e) => bundle.truth.push(e),
                TraceLine::Page(p) => bundle.pages.push(p),
                TraceLine::Sighting(s) => bundle.sightings.push(s),
            }
        }
        bundle.normalize();
        Ok(bundle)
    }
}

/// Field schema of every line kind, for external tooling.
pub fn line_schema() -> serde_json::Value {
    serde_json::json!({
        "meta": {"tick": "integer", "config_digest": "hex sha-256 of the canonical scenario", "seed": "integer"},
        "sighting": {"tick": "integer", "scanner_id": "string", "observed_id": "colon-hex id",
                     "observed_class": "integer (24-bit)", "observed_name": "string"},
        "page": {"tick": "integer", "scanner_id": "string", "target_id": "colon-hex id", "services": ["string"]},
        "truth": {"tick": "integer", "event": [
            "person {person, name, role}",
            "carry {person, device, class}",
            "presence {scanner_id, device, wire_id}",
            "point-of-sale {person, device, seller}",
            "transfer {device, from_person, to_person}",
            "discard {device, site, by_person}",
            "pickup {device, site, by_person}",
            "incident {site, scanners}",
            "peer-page {device, peer, reached}"
        ]},
        "report": {"tick": "integer", "threat": "string", "status": "ok | precondition-unmet", "...": "threat-specific payload"},
        "hashed-sighting": {"tick": "integer", "digest": "16 hex chars", "scanner_id": "string",
                            "class": "integer (24-bit)", "name": "string"}
    })
}
