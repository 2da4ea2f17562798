//! Threat × defense grid: rerun one scenario under each device-side defense
//! and score every attack against each run.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::adversary::evaluate::cell;
use crate::adversary::{
    evaluate_against_truth, run_attacks, AttackParams, IncidentQuery, LinkabilityScore, Metrics, Threat, ThreatMetrics,
};
use crate::countermeasures::NameMode;
use crate::model::{DeviceId, VisibilityMode};
use crate::scenario::{
    EventConfig, KnobConfig, NamesConfig, PolicyConfig, RenamingConfig, ScenarioConfig, ScenarioError,
};
use crate::sim::{point_of_sale_database, run, World};
use crate::trace::{TraceBundle, TruthKind};

pub const DEFAULT_RENAMING_EPOCH: u64 = 600;
pub const DEFAULT_KNOB: f64 = 0.25;
pub const INCIDENT_WINDOW: u64 = 300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Defense {
    Baseline,
    Stealth,
    Renaming { epoch_length: u64 },
    Knob { fraction: f64 },
    FriendlyNameOnly,
    HitCounter,
    GuestBook,
}

impl Defense {
    pub fn standard() -> Vec<Defense> {
        vec![
            Defense::Baseline,
            Defense::Stealth,
            Defense::Renaming { epoch_length: DEFAULT_RENAMING_EPOCH },
            Defense::Knob { fraction: DEFAULT_KNOB },
            Defense::FriendlyNameOnly,
            Defense::HitCounter,
            Defense::GuestBook,
        ]
    }

    /// Rewrites every carried device's policy to apply this defense.
    pub fn apply(&self, config: &ScenarioConfig) -> ScenarioConfig {
        let mut c = config.clone();
        let edit: Box<dyn Fn(&mut PolicyConfig)> = match *self {
            Defense::Baseline | Defense::HitCounter | Defense::GuestBook => return c,
            Defense::Stealth => Box::new(|p| p.visibility.clear()),
            Defense::Renaming { epoch_length } => {
                Box::new(move |p| p.renaming = Some(RenamingConfig { seed: None, epoch_length }))
            }
            Defense::Knob { fraction } => Box::new(move |p| p.knob = Some(KnobConfig { fraction })),
            Defense::FriendlyNameOnly => Box::new(|p| {
                let rename_period = p.names.as_ref().map_or(0, |n| n.rename_period);
                p.names = Some(NamesConfig { mode: NameMode::FriendlyNameOnly, rename_period });
            }),
        };
        for person in &mut c.people {
            let inherited = person.policy.clone();
            for d in &mut person.devices {
                let mut p = d.policy.take().or_else(|| inherited.clone()).unwrap_or_default();
                edit(&mut p);
                d.policy = Some(p);
                if *self == Defense::Stealth {
                    d.mode = Some(VisibilityMode::Stealth);
                }
            }
        }
        for crowd in &mut c.crowds {
            let mut p = crowd.policy.take().unwrap_or_default();
            edit(&mut p);
            crowd.policy = Some(p);
        }
        if *self == Defense::Stealth {
            c.discoverable_fraction = Some(0.0);
        }
        c
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::Baseline => f.write_str("baseline"),
            Defense::Stealth => f.write_str("stealth"),
            Defense::Renaming { .. } => f.write_str("renaming"),
            Defense::Knob { fraction } => write!(f, "knob-{fraction}"),
            Defense::FriendlyNameOnly => f.write_str("friendly-name-only"),
            Defense::HitCounter => f.write_str("hit-counter"),
            Defense::GuestBook => f.write_str("guest-book"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown defense {0:?}")]
pub struct UnknownDefense(pub String);

impl FromStr for Defense {
    type Err = UnknownDefense;

    /// Accepts the display names; `knob` and `renaming` take an optional
    /// `=value` (fraction or epoch length).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || UnknownDefense(s.to_owned());
        let (head, arg) = match s.split_once('=') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let d = match head {
            "baseline" => Defense::Baseline,
            "stealth" => Defense::Stealth,
            "friendly-name-only" => Defense::FriendlyNameOnly,
            "hit-counter" => Defense::HitCounter,
            "guest-book" => Defense::GuestBook,
            "renaming" => Defense::Renaming {
                epoch_length: arg.map_or(Ok(DEFAULT_RENAMING_EPOCH), str::parse).map_err(|_| bad())?,
            },
            "knob" => Defense::Knob { fraction: arg.map_or(Ok(DEFAULT_KNOB), str::parse).map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        if arg.is_some() && !matches!(d, Defense::Renaming { .. } | Defense::Knob { .. }) {
            return Err(bad());
        }
        match d {
            Defense::Knob { fraction } if !(0.0..=1.0).contains(&fraction) => Err(bad()),
            Defense::Renaming { epoch_length: 0 } => Err(bad()),
            d => Ok(d),
        }
    }
}

/// Comma-separated defenses; `all` is the standard set.
pub fn parse_defenses(list: &str) -> Result<Vec<Defense>, UnknownDefense> {
    if list.trim() == "all" {
        return Ok(Defense::standard());
    }
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Incident queries (one per scanner at the incident site) and page targets
/// an investigator would know from the scenario's public facts.
pub fn side_inputs(config: &ScenarioConfig, params: &mut AttackParams) {
    if params.incidents.is_empty() {
        for e in &config.events {
            if let EventConfig::Incident { tick, site } = e {
                params.incidents.extend(config.scanners.iter().filter(|s| &s.site == site).map(|s| IncidentQuery {
                    scanner_id: s.id.clone(),
                    tick: *tick,
                    window: INCIDENT_WINDOW,
                }));
            }
        }
    }
    if params.page_targets.is_empty() {
        let targets: BTreeSet<DeviceId> = config.scanners.iter().flat_map(|s| s.page_targets.iter().copied()).collect();
        params.page_targets = targets.into_iter().collect();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixColumn {
    pub defense: String,
    pub metrics: Metrics,
    /// Distinct identifiers any scanner discovered.
    pub discovered: BTreeSet<DeviceId>,
    /// Share of paired-device pages that reached the peer.
    pub peer_page_success: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DefenseMatrix {
    pub columns: Vec<MatrixColumn>,
}

impl DefenseMatrix {
    pub fn column(&self, defense: &str) -> Option<&MatrixColumn> {
        self.columns.iter().find(|c| c.defense == defense)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("defense,threat,precision,recall,linkability\n");
        for c in &self.columns {
            for r in &c.metrics.rows {
                writeln!(out, "{},{},{},{},{}", c.defense, r.threat, cell(r.precision), cell(r.recall), cell(r.linkability))
                    .expect("string write");
            }
        }
        out
    }
}

fn peer_page_success(bundle: &TraceBundle) -> Option<f64> {
    let (mut tried, mut reached) = (0usize, 0usize);
    for e in &bundle.truth {
        if let TruthKind::PeerPage { reached: r, .. } = e.kind {
            tried += 1;
            reached += usize::from(r);
        }
    }
    (tried > 0).then(|| reached as f64 / tried as f64)
}

/// Share of sightings each discovered device can account for itself: through
/// its hit counter, or through matching guest-book entries.
fn awareness(defense: Defense, bundle: &TraceBundle, world: &World) -> Option<ThreatMetrics> {
    let total = bundle.sightings.len();
    let accounted = match defense {
        Defense::HitCounter => {
            let hits: u64 = world.devices.iter().map(|d| d.runtime.hit_counter()).sum();
            (hits as usize).min(total)
        }
        Defense::GuestBook => {
            let mut book: Vec<(DeviceId, u64)> =
                world.devices.iter().flat_map(|d| d.runtime.guest_book().iter().copied()).collect();
            book.sort_unstable();
            let mut seen: Vec<(DeviceId, u64)> = bundle
                .sightings
                .iter()
                .filter_map(|s| {
                    let sc = world.scanners.iter().find(|sc| sc.config.id == s.scanner_id)?;
                    Some((sc.runtime.wire_id, s.tick))
                })
                .collect();
            seen.sort_unstable();
            multiset_overlap(&seen, &book)
        }
        _ => return None,
    };
    Some(ThreatMetrics {
        threat: "inquiry-awareness".into(),
        precision: None,
        recall: (total > 0).then(|| accounted as f64 / total as f64),
        linkability: None,
    })
}

fn multiset_overlap<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn evaluate_column(config: &ScenarioConfig, seed: u64, defense: Defense, params: &AttackParams) -> Result<MatrixColumn, ScenarioError> {
    let scenario = defense.apply(config);
    let out = run(&scenario, seed)?;
    let bundle = out.bundle;
    let pos = point_of_sale_database(&bundle.truth);
    let (_, outputs) = run_attacks(&bundle.without_truth(), &Threat::ALL, params, Some(&pos));
    let mut metrics = evaluate_against_truth(&outputs, &bundle).expect("outputs come from this bundle");
    if let Some(row) = awareness(defense, &bundle, &out.world) {
        metrics.rows.push(row);
    }
    Ok(MatrixColumn {
        defense: defense.to_string(),
        metrics,
        discovered: bundle.sightings.iter().map(|s| s.observed_id).collect(),
        peer_page_success: peer_page_success(&bundle),
    })
}

/// Runs each defense on its own thread; columns keep the requested order.
pub fn defense_matrix(
    config: &ScenarioConfig,
    seed: u64,
    defenses: &[Defense],
    params: &AttackParams,
) -> Result<DefenseMatrix, ScenarioError> {
    config.validate()?;
    let mut params = params.clone();
    side_inputs(config, &mut params);
    let columns = std::thread::scope(|scope| {
        let handles: Vec<_> = defenses
            .iter()
            .map(|&d| {
                let params = &params;
                scope.spawn(move || evaluate_column(config, seed, d, params))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("matrix worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(DefenseMatrix { columns })
}

/// Linkability scores keyed by matcher, for one column.
pub fn linkability_of(column: &MatrixColumn, matcher: &str) -> Option<LinkabilityScore> {
    column.metrics.linkability.get(matcher).copied()
}
