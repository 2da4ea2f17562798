//! Random but valid scenarios for property tests.

#![allow(dead_code)]

use bluetrail::rng::SplitMix64;
use bluetrail::scenario::ScenarioConfig;
use serde_json::{json, Value};

pub struct WorldSpec {
    pub people: usize,
    pub horizon: u64,
    pub events: bool,
    pub pairing: bool,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self { people: 4, horizon: 900, events: true, pairing: false }
    }
}

pub fn device_hex(person: usize, k: usize) -> String {
    format!("0A:1B:2C:00:{:02X}:{:02X}", person, k)
}

/// Sites on a line, a scanner at most of them, people with one to three
/// devices each wandering between sites, and a replay-consistent sequence of
/// transfers, discards and pickups.
pub fn random_world(seed: u64, spec: &WorldSpec) -> ScenarioConfig {
    let mut rng = SplitMix64::new(seed);
    let n_sites = 2 + rng.next_below(3) as usize;
    let sites: Vec<Value> = (0..n_sites)
        .map(|i| json!({"id": format!("s{i}"), "position": [i as f64 * (40.0 + rng.next_below(120) as f64), 0.0]}))
        .collect();
    let edges: Vec<Value> = (1..n_sites)
        .map(|i| json!({"from": format!("s{}", i - 1), "to": format!("s{i}"), "travel": 5 + rng.next_below(60)}))
        .collect();
    let scanned: Vec<usize> = (0..n_sites).filter(|_| rng.next_below(4) != 0).collect();
    let scanners: Vec<Value> = scanned
        .into_iter()
        .map(|i| {
            json!({
                "id": format!("S{i}"),
                "site": format!("s{i}"),
                "period": 20 + rng.next_below(70),
                "offset": rng.next_below(20),
                "range": 30.0 + rng.next_below(120) as f64,
            })
        })
        .collect();

    let modes = ["discoverable", "discoverable", "discoverable", "stealth", "off"];
    let mut people = Vec::new();
    let mut holders: Vec<(String, usize)> = Vec::new();
    for p in 0..spec.people {
        let mut tick = 0;
        let itinerary: Vec<Value> = (0..1 + rng.next_below(4))
            .map(|_| {
                let w = json!({"tick": tick, "site": format!("s{}", rng.next_below(n_sites as u64))});
                tick += rng.next_below(spec.horizon / 2 + 1);
                w
            })
            .collect();
        let devices: Vec<Value> = (0..1 + rng.next_below(3) as usize)
            .map(|k| {
                holders.push((format!("p{p}"), p * 16 + k));
                json!({
                    "id": device_hex(p, k),
                    "class": 0x200 + 0x100 * rng.next_below(6) as u32,
                    "name": format!("dev {p}.{k}"),
                    "mode": modes[rng.next_below(modes.len() as u64) as usize],
                    "services": ["obex"],
                })
            })
            .collect();
        let mut person = json!({"id": format!("p{p}"), "name": format!("Person {p}"), "itinerary": itinerary, "devices": devices});
        if rng.next_below(3) == 0 {
            person["leave"] = json!(spec.horizon / 2 + rng.next_below(spec.horizon));
        }
        people.push(person);
    }

    let mut events = Vec::new();
    if spec.events && spec.people > 1 {
        // (holder person, or site when discarded)
        let mut state: Vec<(Option<usize>, Option<usize>)> =
            holders.iter().map(|(_, code)| (Some(code / 16), None)).collect();
        let mut tick = 0;
        for _ in 0..rng.next_below(6) {
            tick += 1 + rng.next_below(spec.horizon / 4 + 1);
            let d = rng.next_below(state.len() as u64) as usize;
            let code = holders[d].1;
            let id = device_hex(code / 16, code % 16);
            match state[d] {
                (Some(from), _) if rng.next_below(2) == 0 => {
                    let to = rng.next_below(spec.people as u64) as usize;
                    if to == from {
                        continue;
                    }
                    events.push(json!({"kind": "transfer", "tick": tick, "device": id,
                                       "from_person": format!("p{from}"), "to_person": format!("p{to}")}));
                    state[d] = (Some(to), None);
                }
                (Some(from), _) => {
                    let site = rng.next_below(n_sites as u64) as usize;
                    events.push(json!({"kind": "discard", "tick": tick, "device": id,
                                       "site": format!("s{site}"), "by_person": format!("p{from}")}));
                    state[d] = (None, Some(site));
                }
                (None, Some(site)) => {
                    let by = rng.next_below(spec.people as u64) as usize;
                    events.push(json!({"kind": "pickup", "tick": tick, "device": id,
                                       "site": format!("s{site}"), "by_person": format!("p{by}")}));
                    state[d] = (Some(by), None);
                }
                (None, None) => unreachable!(),
            }
        }
    }

    let mut pairings = Vec::new();
    if spec.pairing {
        // First two devices of person 0 when it has two, else across people.
        let a = device_hex(0, 0);
        let b = if holders.iter().any(|(_, c)| *c == 1) { device_hex(0, 1) } else { device_hex(1, 0) };
        pairings.push(json!({"device": a, "peer": b, "period": 30}));
    }

    let doc = json!({
        "name": format!("random-{seed}"),
        "horizon": spec.horizon,
        "seed": seed,
        "sites": sites,
        "edges": edges,
        "scanners": scanners,
        "people": people,
        "events": events,
        "pairings": pairings,
    });
    let config: ScenarioConfig = serde_json::from_value(doc).expect("generator emits the scenario schema");
    config.validate().unwrap_or_else(|e| panic!("seed {seed}: generated scenario invalid: {e}"));
    config
}
