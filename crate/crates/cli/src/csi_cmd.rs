use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Subcommand;
use serde::Serialize;

use bluetrail::csi::{
    appearance_features, classify_role, hash_id, ingest, match_candidate, presence_window, HashedId, RoleLabel,
    RoleRules, StoreRow, TraceStore, TICKS_PER_HOUR,
};
use bluetrail::trace::TraceBundle;
use bluetrail::{DeviceId, Tick};

use crate::output::{OutDir, RunManifest};
use crate::{read_text, Failure, FailureExt};

#[derive(Subcommand)]
pub enum CsiCommand {
    /// Hash a trace's sightings into a store.
    Ingest {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        salt_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rows whose digest matches a candidate identifier.
    Match {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        salt_file: PathBuf,
        #[arg(long)]
        id: DeviceId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Digests seen by one scanner within FROM:UNTIL (inclusive).
    Presence {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        scanner: String,
        #[arg(long)]
        window: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Role label for every digest in the store.
    Classify {
        #[arg(long)]
        store: PathBuf,
        /// JSON role rules; defaults apply to missing fields.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = TICKS_PER_HOUR)]
        ticks_per_hour: Tick,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
#[serde(tag = "kind", rename = "presence")]
struct PresenceLine<'a> {
    scanner_id: &'a str,
    from: Tick,
    until: Tick,
    digest: HashedId,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename = "match")]
struct MatchLine<'a> {
    candidate_digest: HashedId,
    rows: Vec<&'a StoreRow>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename = "role")]
struct RoleLine {
    digest: HashedId,
    label: RoleLabel,
    n_sightings: u32,
    n_distinct_scanners: u32,
    night_fraction: f64,
    hour_histogram: [u32; 24],
}

/// Decimal or `0x`-prefixed hex.
fn parse_salt(text: &str) -> anyhow::Result<u64> {
    let t = text.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.with_context(|| format!("salt {t:?} is not a 64-bit integer"))
}

fn read_salt(path: &Path) -> Result<u64, Failure> {
    parse_salt(&read_text(path)?).usage()
}

/// The store's own salt is only needed for matching.
fn read_store(path: &Path, salt: u64) -> Result<TraceStore, Failure> {
    TraceStore::parse_jsonl(&read_text(path)?, salt).with_context(|| format!("parsing {}", path.display())).usage()
}

fn parse_window(text: &str) -> anyhow::Result<(Tick, Tick)> {
    let (a, b) = text.split_once(':').ok_or_else(|| anyhow!("window {text:?} is not FROM:UNTIL"))?;
    Ok((a.trim().parse().context("window start")?, b.trim().parse().context("window end")?))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String, Failure> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).invariant()?);
        out.push('\n');
    }
    Ok(out)
}

pub fn run(command: CsiCommand) -> Result<(), Failure> {
    let (name, out, file, text) = match command {
        CsiCommand::Ingest { trace, salt_file, out } => {
            let salt = read_salt(&salt_file)?;
            let bundle =
                TraceBundle::parse_jsonl(&read_text(&trace)?).with_context(|| format!("parsing {}", trace.display())).usage()?;
            ("csi-ingest", out, "store.jsonl", ingest(&bundle.sightings, salt).to_jsonl())
        }
        CsiCommand::Match { store, salt_file, id, out } => {
            let salt = read_salt(&salt_file)?;
            let store = read_store(&store, salt)?;
            let line = MatchLine { candidate_digest: hash_id(id, salt), rows: match_candidate(id, &store) };
            ("csi-match", out, "match.jsonl", jsonl([line])?)
        }
        CsiCommand::Presence { store, scanner, window, out } => {
            let (from, until) = parse_window(&window).usage()?;
            let store = read_store(&store, 0)?;
            let ids = presence_window(&store, &scanner, from, until).usage()?;
            let lines = ids.into_iter().map(|digest| PresenceLine { scanner_id: &scanner, from, until, digest });
            ("csi-presence", out, "presence.jsonl", jsonl(lines)?)
        }
        CsiCommand::Classify { store, rules, ticks_per_hour, out } => {
            let rules: RoleRules = match rules {
                Some(p) => serde_json::from_str(&read_text(&p)?).with_context(|| format!("parsing {}", p.display())).usage()?,
                None => RoleRules::default(),
            };
            rules.validate().usage()?;
            if ticks_per_hour == 0 {
                return Err(Failure::Usage(anyhow!("ticks per hour must be positive")));
            }
            let store = read_store(&store, 0)?;
            let lines = store.subjects().map(|s| {
                let f = appearance_features(&store, s, ticks_per_hour, &rules);
                RoleLine {
                    digest: s,
                    label: classify_role(&f, &rules),
                    n_sightings: f.n_sightings,
                    n_distinct_scanners: f.n_distinct_scanners,
                    night_fraction: f.night_fraction,
                    hour_histogram: f.hour_histogram,
                }
            });
            ("csi-classify", out, "roles.jsonl", jsonl(lines)?)
        }
    };
    let mut dir = OutDir::create(&out).usage()?;
    dir.stage(file, text).invariant()?;
    dir.finish(RunManifest::new(name, &out)).invariant()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn salts_and_windows() {
        assert_eq!(parse_salt(" 0x5EED\n").unwrap(), 0x5eed);
        assert_eq!(parse_salt("42").unwrap(), 42);
        assert!(parse_salt("salty").is_err());
        assert_eq!(parse_window("10:20").unwrap(), (10, 20));
        assert!(parse_window("10").is_err());
    }
}
