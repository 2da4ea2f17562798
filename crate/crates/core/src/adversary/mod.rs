//! Inference attacks over sighting logs.
//!
//! Every attack takes the sighting (or page) log plus declared side inputs
//! and never the ground truth; only [`evaluate`] reads truth records.

pub mod association;
pub mod breadcrumb;
pub mod constellation;
pub mod evaluate;
pub mod linkability;
pub mod location;
pub mod pos;
pub mod preference;
pub mod report;
pub mod transaction;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde_json::json;
use thiserror::Error;

pub use association::associate_identities;
pub use breadcrumb::{implicate_breadcrumbs, Implication, IncidentQuery};
pub use constellation::{mine_constellations, Cluster, ConstellationSet, MiningParams};
pub use evaluate::{evaluate_against_truth, AttackOutputs, EvalError, LinkabilityScore, Metrics, ThreatMetrics};
pub use linkability::{link_epochs, Link, LinkReport, Matcher};
pub use location::{track_by_paging, track_locations, Itinerary, Visit};
pub use pos::{PosDatabase, PosRecord};
pub use preference::{profile_preferences, PreferenceProfile};
pub use report::{reports_to_jsonl, Report, ReportStatus};
pub use transaction::{detect_transactions, TransactionEvent, TransactionParams, TransactionReport};

use crate::btstack::Tick;
use crate::model::{DeviceId, OuiTable, ValueTable};
use crate::trace::TraceBundle;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("precondition unmet: {0}")]
    Precondition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Threat {
    Association,
    Location,
    Preference,
    Constellation,
    Transaction,
    Breadcrumb,
}

impl Threat {
    pub const ALL: [Threat; 6] = [
        Threat::Association,
        Threat::Location,
        Threat::Preference,
        Threat::Constellation,
        Threat::Transaction,
        Threat::Breadcrumb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Threat::Association => "association",
            Threat::Location => "location",
            Threat::Preference => "preference",
            Threat::Constellation => "constellation",
            Threat::Transaction => "transaction",
            Threat::Breadcrumb => "breadcrumb",
        }
    }
}

impl fmt::Display for Threat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown threat {0:?}")]
pub struct UnknownThreat(pub String);

impl FromStr for Threat {
    type Err = UnknownThreat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Threat::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownThreat(s.to_owned()))
    }
}

/// Parses a comma-separated selection; `all` selects every threat.
pub fn parse_threats(list: &str) -> Result<Vec<Threat>, UnknownThreat> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Threat::ALL.to_vec());
    }
    let mut out: Vec<Threat> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct AttackParams {
    pub merge_gap: Tick,
    pub transaction: TransactionParams,
    /// Epoch length for cross-epoch linking.
    pub link_epoch: Tick,
    /// Known ids to follow through page hits; empty means every paged id.
    pub page_targets: Vec<DeviceId>,
    pub incidents: Vec<IncidentQuery>,
    pub oui: OuiTable,
    pub values: ValueTable,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            merge_gap: 300,
            transaction: TransactionParams::default(),
            link_epoch: 600,
            page_targets: Vec::new(),
            incidents: Vec::new(),
            oui: OuiTable::new(),
            values: ValueTable::new(),
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("attack results serialize")
}

/// Runs the selected attacks on the truth-free part of `bundle`.
pub fn run_attacks(
    bundle: &TraceBundle,
    threats: &[Threat],
    params: &AttackParams,
    pos: Option<&PosDatabase>,
) -> (Vec<Report>, AttackOutputs) {
    let sightings = &bundle.sightings;
    let mut out = AttackOutputs {
        config_digest: bundle.config_digest.clone(),
        merge_gap: params.merge_gap,
        transaction_window: params.transaction.window,
        ..Default::default()
    };
    let mut reports = Vec::new();
    let observed: BTreeSet<DeviceId> = sightings.iter().map(|s| s.observed_id).collect();
    let association = pos.map(|db| associate_identities(sightings, db));

    for &threat in threats {
        let name = threat.name();
        let report = match threat {
            Threat::Association => match &association {
                None => Report::unmet(name, "no point-of-sale database"),
                Some(map) => {
                    out.association = Some(map.clone());
                    Report::ok(name, json!({ "identities": map }))
                }
            },
            Threat::Location => {
                let its: Vec<Itinerary> = observed.iter().map(|&id| track_locations(sightings, id, params.merge_gap)).collect();
                let targets: BTreeSet<DeviceId> = if params.page_targets.is_empty() {
                    bundle.pages.iter().map(|p| p.target_id).collect()
                } else {
                    params.page_targets.iter().copied().collect()
                };
                let paged: Vec<Itinerary> =
                    targets.iter().map(|&id| track_by_paging(&bundle.pages, id, params.merge_gap)).collect();
                let links = link_epochs(sightings, params.link_epoch, Matcher::IdEquality);
                let by_name = link_epochs(sightings, params.link_epoch, Matcher::NameEquality);
                match (links, by_name) {
                    (Ok(links), Ok(by_name)) => {
                        let r = Report::ok(
                            name,
                            json!({ "itineraries": its, "paged": paged, "links": [&links, &by_name] }),
                        );
                        out.locations = Some(its);
                        out.paging = Some(paged);
                        out.links = vec![links, by_name];
                        r
                    }
                    (Err(e), _) | (_, Err(e)) => Report::unmet(name, e.to_string()),
                }
            }
            Threat::Preference => {
                let all = profile_preferences("all", sightings, &observed, &params.oui, &params.values);
                let mut per_person: BTreeMap<&str, BTreeSet<DeviceId>> = BTreeMap::new();
                for (id, person) in association.iter().flatten() {
                    per_person.entry(person).or_default().insert(*id);
                }
                let people: Vec<PreferenceProfile> = per_person
                    .into_iter()
                    .map(|(p, ids)| profile_preferences(p, sightings, &ids, &params.oui, &params.values))
                    .collect();
                let r = Report::ok(name, json!({ "overall": all, "people": people }));
                out.preference = Some(all);
                r
            }
            Threat::Constellation => match mine_constellations(sightings, params.transaction.mining) {
                Ok(set) => {
                    let r = Report::ok(name, to_json(&set));
                    out.constellations = Some(set);
                    r
                }
                Err(e) => Report::unmet(name, e.to_string()),
            },
            Threat::Transaction => match detect_transactions(sightings, params.transaction) {
                Ok(tx) => {
                    let r = Report::ok(name, json!({ "events": tx.events, "labels": tx.labels, "params": params.transaction }));
                    out.transactions = Some(tx);
                    r
                }
                Err(e) => Report::unmet(name, e.to_string()),
            },
            Threat::Breadcrumb => match pos {
                None => Report::unmet(name, "no point-of-sale database"),
                Some(_) if params.incidents.is_empty() => Report::unmet(name, "no incident given"),
                Some(db) => {
                    let found: Vec<(IncidentQuery, Vec<Implication>)> = params
                        .incidents
                        .iter()
                        .map(|q| (q.clone(), implicate_breadcrumbs(sightings, q, db)))
                        .collect();
                    let body: Vec<_> = found.iter().map(|(q, imp)| json!({ "incident": q, "implicated": imp })).collect();
                    out.breadcrumbs = Some(found);
                    Report::ok(name, json!({ "incidents": body }))
                }
            },
        };
        reports.push(report);
    }
    (reports, out)
}
