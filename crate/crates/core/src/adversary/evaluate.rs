//! Scoring attack outputs against the simulator's ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::breadcrumb::{Implication, IncidentQuery};
use super::constellation::ConstellationSet;
use super::linkability::{epoch_observations, LinkReport, Matcher};
use super::location::Itinerary;
use super::preference::PreferenceProfile;
use super::transaction::TransactionReport;
use crate::btstack::Tick;
use crate::model::{DeviceClass, DeviceId, MajorClass};
use crate::trace::{TraceBundle, TruthKind};

#[derive(Clone, Debug, Default)]
pub struct AttackOutputs {
    pub config_digest: Option<String>,
    pub association: Option<BTreeMap<DeviceId, String>>,
    pub locations: Option<Vec<Itinerary>>,
    pub paging: Option<Vec<Itinerary>>,
    pub preference: Option<PreferenceProfile>,
    pub constellations: Option<ConstellationSet>,
    pub transactions: Option<TransactionReport>,
    pub breadcrumbs: Option<Vec<(IncidentQuery, Vec<Implication>)>>,
    pub links: Vec<LinkReport>,
    /// Gap used when folding truth into gold visits.
    pub merge_gap: Tick,
    /// Tolerance on transaction switch ticks.
    pub transaction_window: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreatMetrics {
    pub threat: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub linkability: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkabilityScore {
    /// Share of same-device cross-epoch pairs the matcher linked correctly.
    pub raw: f64,
    /// Expected share for a matcher guessing uniformly.
    pub chance: f64,
    /// `max(0, raw - chance)`.
    pub score: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<ThreatMetrics>,
    pub linkability: BTreeMap<String, LinkabilityScore>,
}

impl Metrics {
    pub fn row(&self, threat: &str) -> Option<&ThreatMetrics> {
        self.rows.iter().find(|r| r.threat == threat)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threat,precision,recall,linkability\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.threat, cell(r.precision), cell(r.recall), cell(r.linkability)).expect("string write");
        }
        out
    }
}

pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("config digest mismatch: attack outputs {outputs:?}, trace {trace:?}")]
    DigestMismatch { outputs: Option<String>, trace: Option<String> },
    #[error("trace has no ground truth")]
    NoTruth,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn set_scores<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> (Option<f64>, Option<f64>) {
    let hit = pred.intersection(gold).count();
    (ratio(hit, pred.len()), ratio(hit, gold.len()))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct GoldVisit {
    device: DeviceId,
    scanner: String,
    first: Tick,
    last: Tick,
}

/// Ground truth reorganised for scoring.
struct Truth {
    person_name: BTreeMap<String, String>,
    initial_carrier: BTreeMap<DeviceId, String>,
    class: BTreeMap<DeviceId, DeviceClass>,
    /// `(tick, scanner, device)` for every radio-reachable device at a scan.
    presence: BTreeSet<(Tick, String, DeviceId)>,
    wire_to_device: BTreeMap<DeviceId, DeviceId>,
    /// Per-tick view, for epochs where pseudonyms could in principle repeat.
    wire_at: BTreeMap<(Tick, DeviceId), DeviceId>,
    first_buyer: BTreeMap<DeviceId, String>,
    transfers: Vec<(DeviceId, Tick)>,
    co_carried: BTreeSet<(DeviceId, DeviceId)>,
}

fn record_pairs(set: &BTreeSet<DeviceId>, out: &mut BTreeSet<(DeviceId, DeviceId)>) {
    for &a in set {
        for &b in set.range(a..).skip(1) {
            out.insert((a, b));
        }
    }
}

impl Truth {
    fn new(bundle: &TraceBundle) -> Self {
        let mut t = Truth {
            person_name: BTreeMap::new(),
            initial_carrier: BTreeMap::new(),
            class: BTreeMap::new(),
            presence: BTreeSet::new(),
            wire_to_device: BTreeMap::new(),
            wire_at: BTreeMap::new(),
            first_buyer: BTreeMap::new(),
            transfers: Vec::new(),
            co_carried: BTreeSet::new(),
        };
        let mut carried: BTreeMap<String, BTreeSet<DeviceId>> = BTreeMap::new();
        for e in &bundle.truth {
            match &e.kind {
                TruthKind::Person { person, name, .. } => {
                    t.person_name.insert(person.clone(), name.clone());
                }
                TruthKind::Carry { person, device, class } => {
                    t.initial_carrier.insert(*device, person.clone());
                    t.class.insert(*device, *class);
                    let set = carried.entry(person.clone()).or_default();
                    set.insert(*device);
                    record_pairs(set, &mut t.co_carried);
                }
                TruthKind::Presence { scanner_id, device, wire_id } => {
                    t.presence.insert((e.tick, scanner_id.clone(), *device));
                    t.wire_to_device.entry(*wire_id).or_insert(*device);
                    t.wire_at.insert((e.tick, *wire_id), *device);
                }
                TruthKind::PointOfSale { person, device, .. } => {
                    t.first_buyer.entry(*device).or_insert_with(|| person.clone());
                }
                TruthKind::Transfer { device, from_person, to_person } => {
                    t.transfers.push((*device, e.tick));
                    carried.entry(from_person.clone()).or_default().remove(device);
                    let set = carried.entry(to_person.clone()).or_default();
                    set.insert(*device);
                    record_pairs(set, &mut t.co_carried);
                }
                TruthKind::Discard { device, by_person, .. } => {
                    carried.entry(by_person.clone()).or_default().remove(device);
                }
                TruthKind::Pickup { device, by_person, .. } => {
                    let set = carried.entry(by_person.clone()).or_default();
                    set.insert(*device);
                    record_pairs(set, &mut t.co_carried);
                }
                TruthKind::Incident { .. } | TruthKind::PeerPage { .. } => {}
            }
        }
        t
    }

    fn name_of(&self, person: &str) -> String {
        self.person_name.get(person).cloned().unwrap_or_else(|| person.to_owned())
    }

    /// The real device behind an on-air identifier; unknown ids map to themselves.
    fn resolve(&self, wire: DeviceId) -> DeviceId {
        self.wire_to_device.get(&wire).copied().unwrap_or(wire)
    }

    fn resolve_at(&self, tick: Tick, wire: DeviceId) -> DeviceId {
        self.wire_at.get(&(tick, wire)).copied().unwrap_or_else(|| self.resolve(wire))
    }

    fn present_devices(&self) -> BTreeSet<DeviceId> {
        self.presence.iter().map(|(_, _, d)| *d).collect()
    }

    fn gold_visits(&self, merge_gap: Tick, only: Option<&BTreeSet<DeviceId>>) -> Vec<GoldVisit> {
        let mut per: BTreeMap<DeviceId, Vec<(Tick, &str)>> = BTreeMap::new();
        for (tick, scanner, device) in &self.presence {
            if only.is_none_or(|o| o.contains(device)) {
                per.entry(*device).or_default().push((*tick, scanner));
            }
        }
        per.into_iter()
            .flat_map(|(device, obs)| {
                Itinerary::from_observations(device, obs, merge_gap)
                    .visits
                    .into_iter()
                    .map(move |v| GoldVisit { device, scanner: v.scanner_id, first: v.first, last: v.last })
            })
            .collect()
    }
}

fn overlaps(a: &GoldVisit, b: &GoldVisit) -> bool {
    a.device == b.device && a.scanner == b.scanner && a.first <= b.last && b.first <= a.last
}

fn visit_scores(pred: &[GoldVisit], gold: &[GoldVisit]) -> (Option<f64>, Option<f64>) {
    let p_hit = pred.iter().filter(|p| gold.iter().any(|g| overlaps(p, g))).count();
    let g_hit = gold.iter().filter(|g| pred.iter().any(|p| overlaps(p, g))).count();
    (ratio(p_hit, pred.len()), ratio(g_hit, gold.len()))
}

fn predicted_visits(truth: &Truth, itineraries: &[Itinerary]) -> Vec<GoldVisit> {
    itineraries
        .iter()
        .flat_map(|it| {
            it.visits.iter().map(|v| GoldVisit {
                device: truth.resolve_at(v.first, it.target),
                scanner: v.scanner_id.clone(),
                first: v.first,
                last: v.last,
            })
        })
        .collect()
}

fn score_links(truth: &Truth, bundle: &TraceBundle, report: &LinkReport) -> LinkabilityScore {
    let obs = epoch_observations(&bundle.sightings, report.epoch_length);
    // Which real device each on-air id stood for, per epoch.
    let mut device_of: BTreeMap<(u64, DeviceId), DeviceId> = BTreeMap::new();
    for s in &bundle.sightings {
        device_of
            .entry((s.tick / report.epoch_length, s.observed_id))
            .or_insert_with(|| truth.resolve_at(s.tick, s.observed_id));
    }
    let seen: BTreeSet<(u64, DeviceId)> = device_of.iter().map(|(&(e, _), &d)| (e, d)).collect();
    let mut pairs = 0usize;
    let mut chance = 0.0;
    for &(e, device) in &seen {
        if seen.contains(&(e + 1, device)) {
            pairs += 1;
            chance += 1.0 / obs[&(e + 1)].len() as f64;
        }
    }
    let linked: BTreeSet<(u64, DeviceId)> = report
        .links
        .iter()
        .filter_map(|l| {
            let a = device_of.get(&(l.epoch, l.from))?;
            let b = device_of.get(&(l.epoch + 1, l.to))?;
            (a == b).then_some((l.epoch, *a))
        })
        .collect();
    let (raw, chance) = if pairs == 0 {
        (0.0, 0.0)
    } else {
        (linked.len() as f64 / pairs as f64, chance / pairs as f64)
    };
    LinkabilityScore { raw, chance, score: (raw - chance).max(0.0), pairs }
}

/// Scores every attack present in `outputs` against the truth in `bundle`.
pub fn evaluate_against_truth(outputs: &AttackOutputs, bundle: &TraceBundle) -> Result<Metrics, EvalError> {
    if outputs.config_digest != bundle.config_digest {
        return Err(EvalError::DigestMismatch {
            outputs: outputs.config_digest.clone(),
            trace: bundle.config_digest.clone(),
        });
    }
    if !bundle.has_truth() {
        return Err(EvalError::NoTruth);
    }
    let truth = Truth::new(bundle);
    let present = truth.present_devices();
    let mut m = Metrics::default();
    let mut push = |threat: &str, (precision, recall): (Option<f64>, Option<f64>)| {
        m.rows.push(ThreatMetrics { threat: threat.into(), precision, recall, linkability: None });
    };

    if let Some(assoc) = &outputs.association {
        let pred: BTreeSet<(DeviceId, String)> = assoc.iter().map(|(id, n)| (truth.resolve(*id), n.clone())).collect();
        let gold: BTreeSet<(DeviceId, String)> = present
            .iter()
            .filter_map(|d| truth.initial_carrier.get(d).map(|p| (*d, truth.name_of(p))))
            .collect();
        push("association", set_scores(&pred, &gold));
    }
    if let Some(locs) = &outputs.locations {
        let gold = truth.gold_visits(outputs.merge_gap, None);
        push("location", visit_scores(&predicted_visits(&truth, locs), &gold));
    }
    if let Some(paged) = &outputs.paging {
        let targets: BTreeSet<DeviceId> = paged.iter().map(|it| truth.resolve(it.target)).collect();
        let gold = truth.gold_visits(outputs.merge_gap, Some(&targets));
        push("page-tracking", visit_scores(&predicted_visits(&truth, paged), &gold));
    }
    if let Some(profile) = &outputs.preference {
        let pred: BTreeSet<(DeviceId, MajorClass)> =
            profile.devices.iter().map(|(id, c)| (truth.resolve(*id), c.major())).collect();
        let gold: BTreeSet<(DeviceId, MajorClass)> =
            present.iter().filter_map(|d| truth.class.get(d).map(|c| (*d, c.major()))).collect();
        push("preference", set_scores(&pred, &gold));
    }
    if let Some(set) = &outputs.constellations {
        let mut pred = BTreeSet::new();
        for c in &set.clusters {
            let real: BTreeSet<DeviceId> = c.members.iter().map(|id| truth.resolve(*id)).collect();
            for &a in &real {
                for &b in real.range(a..).skip(1) {
                    pred.insert((a, b));
                }
            }
        }
        let gold: BTreeSet<(DeviceId, DeviceId)> = truth
            .co_carried
            .iter()
            .filter(|(a, b)| present.contains(a) && present.contains(b))
            .copied()
            .collect();
        push("constellation", set_scores(&pred, &gold));
    }
    if let Some(tx) = &outputs.transactions {
        let pred: Vec<(DeviceId, Tick)> = tx.events.iter().map(|e| (truth.resolve(e.device), e.switch_tick)).collect();
        let matched = greedy_match(&pred, &truth.transfers, outputs.transaction_window);
        push("transaction", (ratio(matched, pred.len()), ratio(matched, truth.transfers.len())));
    }
    if let Some(crumbs) = &outputs.breadcrumbs {
        let mut pred = BTreeSet::new();
        let mut gold = BTreeSet::new();
        for (q, found) in crumbs {
            for imp in found {
                if let Some(p) = &imp.person {
                    pred.insert((q.scanner_id.clone(), q.tick, truth.resolve(imp.device), p.clone()));
                }
            }
            let lo = q.tick.saturating_sub(q.window);
            let hi = q.tick.saturating_add(q.window);
            for (_, _, d) in truth.presence.iter().filter(|(t, s, _)| *s == q.scanner_id && (lo..=hi).contains(t)) {
                if let Some(buyer) = truth.first_buyer.get(d) {
                    gold.insert((q.scanner_id.clone(), q.tick, *d, truth.name_of(buyer)));
                }
            }
        }
        push("breadcrumb", set_scores(&pred, &gold));
    }
    for report in &outputs.links {
        let score = score_links(&truth, bundle, report);
        let (key, row) = match report.matcher {
            Matcher::IdEquality => ("id-equality", "location"),
            Matcher::NameEquality => ("name-equality", "name-linkability"),
        };
        m.linkability.insert(key.into(), score);
        match m.rows.iter_mut().find(|r| r.threat == row) {
            Some(r) => r.linkability = Some(score.score),
            None => m.rows.push(ThreatMetrics { threat: row.into(), precision: None, recall: None, linkability: Some(score.score) }),
        }
    }
    Ok(m)
}

/// Pairs predictions with gold events of the same device, closest ticks
/// first, each side used at most once.
fn greedy_match(pred: &[(DeviceId, Tick)], gold: &[(DeviceId, Tick)], tolerance: Tick) -> usize {
    let mut candidates: Vec<(Tick, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            let gap = p.1.abs_diff(g.1);
            if p.0 == g.0 && gap <= tolerance {
                candidates.push((gap, i, j));
            }
        }
    }
    candidates.sort_unstable();
    let (mut used_p, mut used_g) = (BTreeSet::new(), BTreeSet::new());
    let mut n = 0;
    for (_, i, j) in candidates {
        if !used_p.contains(&i) && !used_g.contains(&j) {
            used_p.insert(i);
            used_g.insert(j);
            n += 1;
        }
    }
    n
}
