//! Discrete-event world: people carrying device constellations move over a
//! site graph while fixed scanners run periodic inquiries.
//!
//! Random draws happen in a fixed order so a run is reproducible from its
//! seed: crowd start offsets (crowd by crowd, person by person), then one
//! visibility draw per person whose devices have no explicit mode, then one
//! identity key per device in declaration order, then, during the run,
//! response-loss draws inside lossy inquiries.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::adversary::{PosDatabase, PosRecord};
use crate::btstack::{self, in_link_range, DeviceRuntime, PairingRecord, Point, Tick};
use crate::countermeasures::{current_wire_identity, resolve_peer, DevicePolicy, NameMode};
use crate::model::{DeviceDescriptor, DeviceId, FriendlyName, VisibilityMode};
use crate::rng::SplitMix64;
use crate::scenario::{device_class, EventConfig, PolicyConfig, ScenarioConfig, ScenarioError, ScannerConfig};
use crate::trace::{GroundTruthEvent, PageHit, Sighting, TraceBundle, TruthKind};

#[derive(Clone, Debug)]
pub struct Site {
    pub id: String,
    pub position: Point,
    pub kind: String,
}

#[derive(Clone, Debug)]
pub struct Person {
    pub id: String,
    pub name: String,
    pub role: String,
    /// Arrival ticks at sites, non-decreasing.
    timeline: Vec<(Tick, usize)>,
    leave: Option<Tick>,
    /// Indices into `World::devices`.
    pub carried: BTreeSet<usize>,
}

impl Person {
    /// Site the person is at, or `None` before arrival and after leaving.
    pub fn site_at(&self, tick: Tick) -> Option<usize> {
        if self.leave.is_some_and(|l| tick >= l) {
            return None;
        }
        let idx = self.timeline.partition_point(|(t, _)| *t <= tick);
        idx.checked_sub(1).map(|i| self.timeline[i].1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Holder {
    Person(usize),
    Site(usize),
}

#[derive(Clone, Debug)]
pub struct SimDevice {
    pub runtime: DeviceRuntime,
    pub policy: DevicePolicy,
    pub base_mode: VisibilityMode,
    pub holder: Holder,
    identity_key: u64,
}

#[derive(Clone, Debug)]
pub struct Scanner {
    pub config: ScannerConfig,
    pub runtime: DeviceRuntime,
}

#[derive(Clone, Debug)]
struct ActivePairing {
    device: usize,
    peer: usize,
    period: Tick,
    record: PairingRecord,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepOutput {
    pub sightings: Vec<Sighting>,
    pub pages: Vec<PageHit>,
    pub truth: Vec<GroundTruthEvent>,
}

#[derive(Clone, Debug)]
pub struct World {
    pub clock: Tick,
    pub horizon: Tick,
    pub sites: Vec<Site>,
    pub people: Vec<Person>,
    pub scanners: Vec<Scanner>,
    pub devices: Vec<SimDevice>,
    events: Vec<EventConfig>,
    next_event: usize,
    pairings: Vec<ActivePairing>,
    miss_probability: f64,
    rng: SplitMix64,
    site_index: BTreeMap<String, usize>,
    person_index: BTreeMap<String, usize>,
    device_index: BTreeMap<DeviceId, usize>,
    present: Vec<bool>,
}

struct PersonPlan {
    id: String,
    name: String,
    role: String,
    waypoints: Vec<(Tick, usize)>,
    leave: Option<Tick>,
    devices: Vec<DevicePlan>,
}

struct DevicePlan {
    desc: DeviceDescriptor,
    explicit_mode: bool,
    policy: DevicePolicy,
}

impl World {
    /// Builds the world at tick 0 and returns the roster truth records.
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<(World, Vec<GroundTruthEvent>), ScenarioError> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);

        let sites: Vec<Site> = config
            .sites
            .iter()
            .map(|s| Site { id: s.id.clone(), position: Point::new(s.position[0], s.position[1]), kind: s.kind.clone() })
            .collect();
        let site_index: BTreeMap<String, usize> = sites.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let graph = Graph::new(sites.len(), config, &site_index);

        let build_policy = |p: Option<&PolicyConfig>, id: DeviceId| -> DevicePolicy {
            p.map(|p| p.build(id).expect("validated")).unwrap_or_default()
        };

        let mut plans = Vec::new();
        for p in &config.people {
            let person_policy = p.policy.as_ref();
            let devices = p
                .devices
                .iter()
                .map(|d| {
                    let desc = DeviceDescriptor::new(
                        d.id,
                        device_class(d.class),
                        FriendlyName::new(d.name.clone()).expect("validated"),
                        d.mode.unwrap_or(VisibilityMode::Discoverable),
                        d.services.clone(),
                    )
                    .expect("validated")
                    .with_value_hint(d.value_hint);
                    DevicePlan {
                        desc,
                        explicit_mode: d.mode.is_some(),
                        policy: build_policy(d.policy.as_ref().or(person_policy), d.id),
                    }
                })
                .collect();
            plans.push(PersonPlan {
                id: p.id.clone(),
                name: p.name.clone(),
                role: p.role.clone(),
                waypoints: p.itinerary.iter().map(|w| (w.tick, site_index[&w.site])).collect(),
                leave: p.leave,
                devices,
            });
        }
        for c in &config.crowds {
            for i in 0..c.count {
                let start = c.start + rng.next_below(c.spread + 1);
                let waypoints: Vec<_> = c
                    .route
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (start + k as Tick * c.dwell, site_index[s]))
                    .collect();
                let name = format!("{}{:04}", c.name_prefix, i);
                let desc = DeviceDescriptor::new(
                    c.device_id(i),
                    device_class(c.class),
                    FriendlyName::new(name).expect("validated"),
                    VisibilityMode::Discoverable,
                    Vec::new(),
                )
                .expect("no services");
                plans.push(PersonPlan {
                    id: c.person_id(i),
                    name: c.person_id(i),
                    role: c.role.clone(),
                    leave: Some(start + c.route.len() as Tick * c.dwell),
                    waypoints,
                    devices: vec![DevicePlan { desc, explicit_mode: false, policy: build_policy(c.policy.as_ref(), c.device_id(i)) }],
                });
            }
        }

        for plan in &mut plans {
            if plan.devices.iter().all(|d| d.explicit_mode) {
                continue;
            }
            let mode = match config.discoverable_fraction {
                Some(f) if !rng.chance(f) => VisibilityMode::Stealth,
                _ => VisibilityMode::Discoverable,
            };
            for d in plan.devices.iter_mut().filter(|d| !d.explicit_mode) {
                d.desc.mode = mode;
            }
        }

        let mut truth = Vec::new();
        let mut people = Vec::new();
        let mut devices = Vec::new();
        for (pi, plan) in plans.into_iter().enumerate() {
            truth.push(GroundTruthEvent {
                tick: 0,
                kind: TruthKind::Person { person: plan.id.clone(), name: plan.name.clone(), role: plan.role.clone() },
            });
            let mut carried = BTreeSet::new();
            for d in plan.devices {
                truth.push(GroundTruthEvent {
                    tick: 0,
                    kind: TruthKind::Carry { person: plan.id.clone(), device: d.desc.id, class: d.desc.class },
                });
                let mut runtime = DeviceRuntime::new(d.desc, Point::default());
                runtime.base_range = config.base_range;
                runtime.knob = d.policy.knob;
                carried.insert(devices.len());
                devices.push(SimDevice {
                    base_mode: runtime.desc.mode,
                    runtime,
                    policy: d.policy,
                    holder: Holder::Person(pi),
                    identity_key: 0,
                });
            }
            people.push(Person {
                id: plan.id,
                name: plan.name,
                role: plan.role,
                timeline: graph.timeline(&plan.waypoints),
                leave: plan.leave,
                carried,
            });
        }
        for d in &mut devices {
            d.identity_key = rng.next_u64();
        }

        let scanners = config
            .scanners
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let desc = DeviceDescriptor::new(
                    config.scanner_address(i),
                    device_class(0x0100),
                    FriendlyName::new(s.id.clone()).unwrap_or_default(),
                    VisibilityMode::Stealth,
                    Vec::new(),
                )
                .expect("no services");
                let mut runtime = DeviceRuntime::new(desc, sites[site_index[&s.site]].position);
                runtime.base_range = s.range;
                Scanner { config: s.clone(), runtime }
            })
            .collect();

        let person_index = people.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        let device_index: BTreeMap<DeviceId, usize> =
            devices.iter().enumerate().map(|(i, d)| (d.runtime.desc.id, i)).collect();

        let mut pairings = Vec::new();
        for p in &config.pairings {
            let (a, b) = (device_index[&p.device], device_index[&p.peer]);
            // Without a renaming seed the peer's fixed id stands in as the seed
            // and is paged directly.
            let peer_seed = devices[b].policy.renaming.map_or(p.peer.value(), |r| r.seed);
            let record = PairingRecord { peer_seed, established_tick: 0 };
            devices[a].runtime.pair(p.peer, record);
            pairings.push(ActivePairing { device: a, peer: b, period: p.period, record });
        }

        let mut events = config.events.clone();
        events.sort_by_key(EventConfig::tick);

        let world = World {
            clock: 0,
            horizon: config.horizon,
            present: vec![false; devices.len()],
            sites,
            people,
            scanners,
            devices,
            events,
            next_event: 0,
            pairings,
            miss_probability: config.miss_probability,
            rng,
            site_index,
            person_index,
            device_index,
        };
        Ok((world, truth))
    }

    pub fn device(&self, id: DeviceId) -> Option<&SimDevice> {
        self.device_index.get(&id).map(|&i| &self.devices[i])
    }

    pub fn person(&self, id: &str) -> Option<&Person> {
        self.person_index.get(id).map(|&i| &self.people[i])
    }

    /// Where the device is at `tick`, if it is in the world at all.
    pub fn device_position(&self, index: usize, tick: Tick) -> Option<Point> {
        match self.devices[index].holder {
            Holder::Person(p) => self.people[p].site_at(tick).map(|s| self.sites[s].position),
            Holder::Site(s) => Some(self.sites[s].position),
        }
    }

    /// Each device is held by exactly one person or lies at one site.
    pub fn check_conservation(&self) -> Result<(), String> {
        let mut seen = vec![0usize; self.devices.len()];
        for (pi, p) in self.people.iter().enumerate() {
            for &d in &p.carried {
                seen[d] += 1;
                if self.devices[d].holder != Holder::Person(pi) {
                    return Err(format!("device {} in {}'s set but held elsewhere", self.devices[d].runtime.desc.id, p.id));
                }
            }
        }
        for (d, dev) in self.devices.iter().enumerate() {
            let expected = usize::from(matches!(dev.holder, Holder::Person(_)));
            if seen[d] != expected {
                return Err(format!("device {} held {} times", dev.runtime.desc.id, seen[d]));
            }
        }
        Ok(())
    }

    fn refresh(&mut self, tick: Tick) {
        for i in 0..self.devices.len() {
            let pos = self.device_position(i, tick);
            self.present[i] = pos.is_some();
            let d = &mut self.devices[i];
            if let Some(p) = pos {
                d.runtime.position = p;
            }
            d.runtime.set_mode(d.policy.mode_at(d.base_mode, tick));
            let (id, name) = current_wire_identity(&d.runtime.desc, &d.policy, d.identity_key, tick);
            d.runtime.wire_id = id;
            d.runtime.wire_name = name;
        }
    }

    /// Processes tick `clock`, then advances the clock by one.
    ///
    /// Scans see the world as it stands at the tick; scripted events fire
    /// afterwards, so their effects are observable from the next tick.
    pub fn step(&mut self) -> StepOutput {
        let tick = self.clock;
        let mut out = StepOutput::default();
        let scanning: Vec<usize> = (0..self.scanners.len()).filter(|&i| self.scanners[i].config.scans_at(tick)).collect();
        let paging = self.pairings.iter().any(|p| tick % p.period == 0);
        if !scanning.is_empty() || paging {
            self.refresh(tick);
        }
        for s in scanning {
            self.scan(s, tick, &mut out);
        }
        if paging {
            self.peer_pages(tick, &mut out);
        }
        while self.events.get(self.next_event).is_some_and(|e| e.tick() == tick) {
            let ev = self.events[self.next_event].clone();
            self.next_event += 1;
            self.apply(ev, tick, &mut out);
        }
        // Events scheduled before the tick we started at can't fire any more.
        while self.events.get(self.next_event).is_some_and(|e| e.tick() < tick) {
            self.next_event += 1;
        }
        self.clock += 1;
        out
    }

    fn scan(&mut self, s: usize, tick: Tick, out: &mut StepOutput) {
        let scanner = &self.scanners[s];
        for (d, present) in self.devices.iter().zip(&self.present) {
            let rt = &d.runtime;
            if *present && rt.powered && rt.mode() != VisibilityMode::Off && in_link_range(&scanner.runtime, rt).is_some() {
                out.truth.push(GroundTruthEvent {
                    tick,
                    kind: TruthKind::Presence {
                        scanner_id: scanner.config.id.clone(),
                        device: rt.desc.id,
                        wire_id: rt.wire_id,
                    },
                });
            }
        }
        let world = self.devices.iter_mut().zip(&self.present).filter(|(_, p)| **p).map(|(d, _)| &mut d.runtime);
        let responses =
            btstack::inquiry_lossy(&scanner.runtime, world, tick, self.miss_probability, &mut self.rng)
                .expect("scanners are powered and never off");
        out.sightings.extend(responses.into_iter().map(|r| Sighting {
            tick,
            scanner_id: scanner.config.id.clone(),
            observed_id: r.responder_id,
            observed_class: r.class,
            observed_name: r.name,
        }));
        for &target in &scanner.config.page_targets {
            let world = self.devices.iter().zip(&self.present).filter(|(_, p)| **p).map(|(d, _)| &d.runtime);
            let result = btstack::page(&scanner.runtime, target, world, tick).expect("scanners can page");
            if result.reached {
                out.pages.push(PageHit {
                    tick,
                    scanner_id: scanner.config.id.clone(),
                    target_id: target,
                    services: result.services,
                });
            }
        }
    }

    fn peer_pages(&mut self, tick: Tick, out: &mut StepOutput) {
        for p in &self.pairings {
            if tick % p.period != 0 || !self.present[p.device] || !self.present[p.peer] {
                continue;
            }
            let me = &self.devices[p.device].runtime;
            let peer = &self.devices[p.peer];
            if me.mode() == VisibilityMode::Off || !me.powered {
                continue;
            }
            if in_link_range(me, &peer.runtime).is_none() || peer.runtime.mode() == VisibilityMode::Off {
                continue;
            }
            let target = match (peer.policy.names.mode, peer.policy.renaming) {
                (NameMode::StableId, Some(r)) => resolve_peer(&p.record, tick, r.epoch_length()),
                _ => peer.runtime.desc.id,
            };
            let present = self.devices.iter().zip(&self.present).filter(|(_, pr)| **pr).map(|(d, _)| &d.runtime);
            let reached = btstack::page(me, target, present, tick).map(|r| r.reached).unwrap_or(false);
            out.truth.push(GroundTruthEvent {
                tick,
                kind: TruthKind::PeerPage { device: me.desc.id, peer: peer.runtime.desc.id, reached },
            });
        }
    }

    fn apply(&mut self, ev: EventConfig, tick: Tick, out: &mut StepOutput) {
        let kind = match ev {
            EventConfig::PointOfSale { person, device, seller, .. } => TruthKind::PointOfSale { person, device, seller },
            EventConfig::Transfer { device, from_person, to_person, .. } => {
                let d = self.device_index[&device];
                let (from, to) = (self.person_index[&from_person], self.person_index[&to_person]);
                self.people[from].carried.remove(&d);
                self.people[to].carried.insert(d);
                self.devices[d].holder = Holder::Person(to);
                TruthKind::Transfer { device, from_person, to_person }
            }
            EventConfig::Discard { device, site, by_person, .. } => {
                let d = self.device_index[&device];
                let p = self.person_index[&by_person];
                self.people[p].carried.remove(&d);
                self.devices[d].holder = Holder::Site(self.site_index[&site]);
                TruthKind::Discard { device, site, by_person }
            }
            EventConfig::Pickup { device, site, by_person, .. } => {
                let d = self.device_index[&device];
                let p = self.person_index[&by_person];
                self.people[p].carried.insert(d);
                self.devices[d].holder = Holder::Person(p);
                TruthKind::Pickup { device, site, by_person }
            }
            EventConfig::Incident { site, .. } => {
                let scanners = self
                    .scanners
                    .iter()
                    .filter(|s| s.config.site == site)
                    .map(|s| s.config.id.clone())
                    .collect();
                TruthKind::Incident { site, scanners }
            }
        };
        out.truth.push(GroundTruthEvent { tick, kind });
    }
}

/// Undirected site graph with travel times.
struct Graph {
    adjacency: Vec<Vec<(usize, Tick)>>,
}

impl Graph {
    fn new(n: usize, config: &ScenarioConfig, index: &BTreeMap<String, usize>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for e in &config.edges {
            let (a, b) = (index[&e.from], index[&e.to]);
            adjacency[a].push((b, e.travel));
            adjacency[b].push((a, e.travel));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self { adjacency }
    }

    /// Shortest path by travel time as `(cumulative ticks, site)` hops,
    /// excluding the start. `None` when the sites are disconnected.
    fn path(&self, from: usize, to: usize) -> Option<Vec<(Tick, usize)>> {
        if from == to {
            return Some(Vec::new());
        }
        let n = self.adjacency.len();
        let mut dist = vec![Tick::MAX; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0;
        heap.push(Reverse((0, from)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == to {
                break;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d.saturating_add(w);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        if dist[to] == Tick::MAX {
            return None;
        }
        let mut hops = Vec::new();
        let mut cur = to;
        while cur != from {
            hops.push((dist[cur], cur));
            cur = prev[cur];
        }
        hops.reverse();
        Some(hops)
    }

    /// Arrival schedule for waypoints read as "at tick t, head for site s".
    /// A new waypoint cuts short any travel still in progress.
    fn timeline(&self, waypoints: &[(Tick, usize)]) -> Vec<(Tick, usize)> {
        let mut out: Vec<(Tick, usize)> = Vec::new();
        for &(depart, target) in waypoints {
            out.retain(|&(t, _)| t <= depart);
            let Some(&(_, here)) = out.last() else {
                out.push((depart, target));
                continue;
            };
            match self.path(here, target) {
                Some(hops) => out.extend(hops.into_iter().map(|(dt, s)| (depart + dt, s))),
                None => out.push((depart, target)),
            }
        }
        out
    }
}

/// The retailers' sales ledger implied by a run's point-of-sale events.
pub fn point_of_sale_database(truth: &[GroundTruthEvent]) -> PosDatabase {
    let names: BTreeMap<&str, &str> = truth
        .iter()
        .filter_map(|e| match &e.kind {
            TruthKind::Person { person, name, .. } => Some((person.as_str(), name.as_str())),
            _ => None,
        })
        .collect();
    PosDatabase::new(truth.iter().filter_map(|e| match &e.kind {
        TruthKind::PointOfSale { person, device, seller } => Some(PosRecord {
            device: *device,
            name: names.get(person.as_str()).copied().unwrap_or(person).to_owned(),
            seller: seller.clone(),
            tick: e.tick,
        }),
        _ => None,
    }))
}

pub struct RunOutput {
    pub bundle: TraceBundle,
    pub world: World,
}

/// Steps from tick 0 up to (excluding) the horizon.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    let (mut world, truth) = World::new(config, seed)?;
    let mut bundle = TraceBundle {
        config_digest: Some(config.digest()),
        seed: Some(seed),
        truth,
        ..Default::default()
    };
    while world.clock < world.horizon {
        let out = world.step();
        bundle.sightings.extend(out.sightings);
        bundle.pages.extend(out.pages);
        bundle.truth.extend(out.truth);
    }
    Ok(RunOutput { bundle, world })
}
