//! Abstract inquiry/page protocol with the discovery hit counter and guest
//! book patches, plus piconet and pairing bookkeeping.
//!
//! Discovery is instantaneous: every powered, discoverable device inside the
//! link range answers every inquiry. A link needs both ends' effective
//! ranges to cover the distance, so a device turning its range knob down
//! shrinks who can see it regardless of the inquirer's power.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::countermeasures::{effective_range, RangeKnob};
use crate::model::{DeviceClass, DeviceDescriptor, DeviceId, FriendlyName, VisibilityMode};
use crate::rng::SplitMix64;

pub type Tick = u64;

pub const DEFAULT_RANGE_M: f64 = 100.0;
pub const MAX_PICONET_SLAVES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("inquirer {0} is powered down")]
    Unpowered(DeviceId),
    #[error("inquirer {0} has its radio off")]
    RadioOff(DeviceId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PiconetError {
    #[error("piconet holds at most {MAX_PICONET_SLAVES} slaves, got {0}")]
    Capacity(usize),
    #[error("device {0} appears more than once in the piconet")]
    Duplicate(DeviceId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairingRecord {
    pub peer_seed: u64,
    pub established_tick: Tick,
}

/// Live state of one simulated radio.
///
/// `wire_id`/`wire_name` are what the device currently puts on the air; the
/// simulation refreshes them from the device's policy before each scan.
#[derive(Clone, Debug)]
pub struct DeviceRuntime {
    pub desc: DeviceDescriptor,
    pub position: Point,
    pub powered: bool,
    pub base_range: f64,
    pub knob: RangeKnob,
    pub wire_id: DeviceId,
    pub wire_name: FriendlyName,
    hit_counter: u64,
    guest_book: Vec<(DeviceId, Tick)>,
    pairings: BTreeMap<DeviceId, PairingRecord>,
}

impl DeviceRuntime {
    pub fn new(desc: DeviceDescriptor, position: Point) -> Self {
        Self {
            wire_id: desc.id,
            wire_name: desc.name.clone(),
            desc,
            position,
            powered: true,
            base_range: DEFAULT_RANGE_M,
            knob: RangeKnob::FULL,
            hit_counter: 0,
            guest_book: Vec::new(),
            pairings: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> VisibilityMode {
        self.desc.mode
    }

    pub fn set_mode(&mut self, mode: VisibilityMode) {
        self.desc.mode = mode;
    }

    pub fn range(&self) -> f64 {
        effective_range(self.base_range, self.knob)
    }

    pub fn hit_counter(&self) -> u64 {
        self.hit_counter
    }

    pub fn guest_book(&self) -> &[(DeviceId, Tick)] {
        &self.guest_book
    }

    pub fn pair(&mut self, peer: DeviceId, record: PairingRecord) {
        self.pairings.insert(peer, record);
    }

    pub fn pairing(&self, peer: DeviceId) -> Option<&PairingRecord> {
        self.pairings.get(&peer)
    }

    pub fn pairings(&self) -> impl Iterator<Item = (&DeviceId, &PairingRecord)> {
        self.pairings.iter()
    }

    fn answers_pages(&self) -> bool {
        self.powered && self.desc.mode != VisibilityMode::Off
    }

    fn record_discovery(&mut self, inquirer: DeviceId, tick: Tick) {
        self.hit_counter += 1;
        self.guest_book.push((inquirer, tick));
    }

    fn check_can_transmit(&self) -> Result<(), ProtocolError> {
        if !self.powered {
            return Err(ProtocolError::Unpowered(self.desc.id));
        }
        if self.desc.mode == VisibilityMode::Off {
            return Err(ProtocolError::RadioOff(self.desc.id));
        }
        Ok(())
    }
}

/// Whether a link between the two radios closes. A zero effective range on
/// either side silences the link even at distance zero.
pub fn in_link_range(a: &DeviceRuntime, b: &DeviceRuntime) -> Option<f64> {
    let range = a.range().min(b.range());
    let d = a.position.distance(b.position);
    (range > 0.0 && d <= range).then_some(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InquiryResponse {
    pub responder_id: DeviceId,
    pub class: DeviceClass,
    pub name: FriendlyName,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PageResult {
    pub reached: bool,
    pub services: Vec<String>,
}

/// Broadcast discovery. Every responder's hit counter and guest book record
/// the inquirer's wire identifier.
pub fn inquiry<'a>(
    inquirer: &DeviceRuntime,
    world: impl IntoIterator<Item = &'a mut DeviceRuntime>,
    tick: Tick,
) -> Result<Vec<InquiryResponse>, ProtocolError> {
    inquire(inquirer, world, tick, None)
}

/// Inquiry where each would-be response is independently lost with
/// `miss_probability`. One draw is taken per eligible responder, in world
/// order; nothing is drawn when the probability is 0.
pub fn inquiry_lossy<'a>(
    inquirer: &DeviceRuntime,
    world: impl IntoIterator<Item = &'a mut DeviceRuntime>,
    tick: Tick,
    miss_probability: f64,
    rng: &mut SplitMix64,
) -> Result<Vec<InquiryResponse>, ProtocolError> {
    if miss_probability > 0.0 {
        inquire(inquirer, world, tick, Some((miss_probability, rng)))
    } else {
        inquire(inquirer, world, tick, None)
    }
}

fn inquire<'a>(
    inquirer: &DeviceRuntime,
    world: impl IntoIterator<Item = &'a mut DeviceRuntime>,
    tick: Tick,
    mut loss: Option<(f64, &mut SplitMix64)>,
) -> Result<Vec<InquiryResponse>, ProtocolError> {
    inquirer.check_can_transmit()?;
    let mut out = Vec::new();
    for d in world {
        if d.desc.id == inquirer.desc.id || !d.powered || d.desc.mode != VisibilityMode::Discoverable {
            continue;
        }
        let Some(distance) = in_link_range(inquirer, d) else { continue };
        if let Some((p, rng)) = loss.as_mut() {
            if rng.chance(*p) {
                continue;
            }
        }
        d.record_discovery(inquirer.wire_id, tick);
        out.push(InquiryResponse {
            responder_id: d.wire_id,
            class: d.desc.class,
            name: d.wire_name.clone(),
            distance,
        });
    }
    out.sort_by(|a, b| {
        a.responder_id.cmp(&b.responder_id).then(a.distance.total_cmp(&b.distance))
    });
    Ok(out)
}

/// Directed connection attempt to whichever device currently carries
/// `target` on the air. Works against stealth devices; leaves the discovery
/// counters alone.
pub fn page<'a>(
    inquirer: &DeviceRuntime,
    target: DeviceId,
    world: impl IntoIterator<Item = &'a DeviceRuntime>,
    _tick: Tick,
) -> Result<PageResult, ProtocolError> {
    inquirer.check_can_transmit()?;
    let hit = world.into_iter().find(|d| {
        d.desc.id != inquirer.desc.id
            && d.wire_id == target
            && d.answers_pages()
            && in_link_range(inquirer, d).is_some()
    });
    Ok(match hit {
        Some(d) => PageResult { reached: true, services: d.desc.services().to_vec() },
        None => PageResult::default(),
    })
}

pub fn set_mode(mut device: DeviceRuntime, mode: VisibilityMode) -> DeviceRuntime {
    device.set_mode(mode);
    device
}

pub fn read_hit_counter(device: &DeviceRuntime) -> u64 {
    device.hit_counter()
}

pub fn read_guest_book(device: &DeviceRuntime) -> Vec<(DeviceId, Tick)> {
    device.guest_book().to_vec()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piconet {
    master: DeviceId,
    slaves: Vec<DeviceId>,
}

impl Piconet {
    pub fn master(&self) -> DeviceId {
        self.master
    }

    pub fn slaves(&self) -> &[DeviceId] {
        &self.slaves
    }

    pub fn len(&self) -> usize {
        1 + self.slaves.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn members(&self) -> impl Iterator<Item = DeviceId> + '_ {
        std::iter::once(self.master).chain(self.slaves.iter().copied())
    }
}

pub fn form_piconet(master: DeviceId, slaves: Vec<DeviceId>) -> Result<Piconet, PiconetError> {
    let mut seen = std::collections::BTreeSet::from([master]);
    for &s in &slaves {
        if !seen.insert(s) {
            return Err(PiconetError::Duplicate(s));
        }
    }
    if slaves.len() > MAX_PICONET_SLAVES {
        return Err(PiconetError::Capacity(slaves.len()));
    }
    Ok(Piconet { master, slaves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceClass;
    use proptest::prelude::*;

    fn dev(nic: u32, x: f64, mode: VisibilityMode) -> DeviceRuntime {
        let desc = DeviceDescriptor::new(
            DeviceId::from_parts(0x0A1B2C, nic),
            DeviceClass::of_major(2),
            FriendlyName::new(format!("dev{nic}")).unwrap(),
            mode,
            vec!["obex".into(), "serial".into()],
        )
        .unwrap();
        DeviceRuntime::new(desc, Point::new(x, 0.0))
    }

    fn scanner() -> DeviceRuntime {
        dev(0xFFFFFF, 0.0, VisibilityMode::Stealth)
    }

    #[test]
    fn empty_world_gets_no_responses() {
        let s = scanner();
        let mut world: Vec<DeviceRuntime> = vec![];
        assert!(inquiry(&s, &mut world, 0).unwrap().is_empty());
    }

    #[test]
    fn discoverable_in_range_responds() {
        let s = scanner();
        let mut world = vec![dev(1, 50.0, VisibilityMode::Discoverable)];
        let r = inquiry(&s, &mut world, 5).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].distance, 50.0);
        assert_eq!(world[0].hit_counter(), 1);
        assert_eq!(world[0].guest_book(), &[(s.wire_id, 5)]);
    }

    #[test]
    fn stealth_never_responds() {
        let s = scanner();
        let mut world = vec![dev(1, 1.0, VisibilityMode::Stealth)];
        assert!(inquiry(&s, &mut world, 0).unwrap().is_empty());
        assert_eq!(world[0].hit_counter(), 0);
    }

    #[test]
    fn off_inquirer_is_rejected() {
        let mut s = scanner();
        s.set_mode(VisibilityMode::Off);
        assert_eq!(inquiry(&s, &mut [], 0).unwrap_err(), ProtocolError::RadioOff(s.desc.id));
        let mut s = scanner();
        s.powered = false;
        assert!(page(&s, DeviceId::default(), &[], 0).is_err());
    }

    #[test]
    fn page_reaches_stealth_device() {
        let s = scanner();
        let world = vec![dev(1, 1.0, VisibilityMode::Stealth)];
        let r = page(&s, world[0].desc.id, &world, 0).unwrap();
        assert!(r.reached);
        assert_eq!(r.services, vec!["obex".to_string(), "serial".to_string()]);
        assert_eq!(world[0].hit_counter(), 0);
        assert!(world[0].guest_book().is_empty());
    }

    #[test]
    fn page_misses_off_and_far_devices() {
        let s = scanner();
        let world = vec![dev(1, 1.0, VisibilityMode::Off), dev(2, 150.0, VisibilityMode::Stealth)];
        assert!(!page(&s, world[0].desc.id, &world, 0).unwrap().reached);
        assert!(!page(&s, world[1].desc.id, &world, 0).unwrap().reached);
        assert!(page(&s, world[1].desc.id, &world, 0).unwrap().services.is_empty());
    }

    #[test]
    fn mode_changes() {
        let s = scanner();
        let d = dev(1, 10.0, VisibilityMode::Discoverable);
        let same = set_mode(d.clone(), VisibilityMode::Discoverable);
        assert_eq!(same.desc, d.desc);

        let mut world = vec![set_mode(d, VisibilityMode::Stealth)];
        assert!(inquiry(&s, &mut world, 0).unwrap().is_empty());
        world[0].set_mode(VisibilityMode::Off);
        world[0] = set_mode(world[0].clone(), VisibilityMode::Discoverable);
        assert_eq!(inquiry(&s, &mut world, 1).unwrap().len(), 1);
    }

    #[test]
    fn counters_follow_discoveries_not_pages() {
        let s = scanner();
        let mut world = vec![dev(1, 10.0, VisibilityMode::Discoverable)];
        assert_eq!(read_hit_counter(&world[0]), 0);
        assert!(read_guest_book(&world[0]).is_empty());
        for t in [60, 120, 180] {
            inquiry(&s, &mut world, t).unwrap();
        }
        assert_eq!(read_hit_counter(&world[0]), 3);
        assert_eq!(read_guest_book(&world[0]), vec![(s.wire_id, 60), (s.wire_id, 120), (s.wire_id, 180)]);
        page(&s, world[0].desc.id, &world, 200).unwrap();
        assert_eq!(read_hit_counter(&world[0]), 3);
    }

    #[test]
    fn zero_range_is_silent() {
        let s = scanner();
        let mut d = dev(1, 0.0, VisibilityMode::Discoverable);
        d.knob = RangeKnob::new(0.0).unwrap();
        let mut world = vec![d];
        assert!(inquiry(&s, &mut world, 0).unwrap().is_empty());
        assert!(!page(&s, world[0].desc.id, &world, 0).unwrap().reached);
    }

    #[test]
    fn lossy_inquiry_drops_everything_at_one() {
        let s = scanner();
        let mut world = vec![dev(1, 1.0, VisibilityMode::Discoverable)];
        let mut rng = SplitMix64::new(3);
        assert!(inquiry_lossy(&s, &mut world, 0, 1.0, &mut rng).unwrap().is_empty());
        assert_eq!(world[0].hit_counter(), 0);
        let before = rng;
        assert_eq!(inquiry_lossy(&s, &mut world, 0, 0.0, &mut rng).unwrap().len(), 1);
        assert_eq!(rng, before);
    }

    #[test]
    fn piconet_capacity() {
        let id = |n| DeviceId::from_parts(1, n);
        assert_eq!(form_piconet(id(0), (1..=7).map(id).collect()).unwrap().len(), 8);
        assert_eq!(
            form_piconet(id(0), (1..=8).map(id).collect()).unwrap_err(),
            PiconetError::Capacity(8)
        );
        assert_eq!(form_piconet(id(0), vec![]).unwrap().len(), 1);
        assert_eq!(form_piconet(id(0), vec![id(1), id(1)]).unwrap_err(), PiconetError::Duplicate(id(1)));
        assert_eq!(form_piconet(id(0), vec![id(0)]).unwrap_err(), PiconetError::Duplicate(id(0)));
    }

    fn arb_mode() -> impl Strategy<Value = VisibilityMode> {
        prop_oneof![
            Just(VisibilityMode::Off),
            Just(VisibilityMode::Stealth),
            Just(VisibilityMode::Discoverable)
        ]
    }

    proptest! {
        #[test]
        fn inquiry_only_returns_discoverable(
            devices in proptest::collection::vec((0.0f64..300.0, arb_mode(), any::<bool>()), 0..30)
        ) {
            let s = scanner();
            let mut world: Vec<_> = devices
                .iter()
                .enumerate()
                .map(|(i, &(x, m, p))| { let mut d = dev(i as u32, x, m); d.powered = p; d })
                .collect();
            let snapshot = world.clone();
            let r = inquiry(&s, &mut world, 0).unwrap();
            let r2 = inquiry(&s, &mut snapshot.clone(), 0).unwrap();
            prop_assert_eq!(&r, &r2);
            prop_assert!(r.windows(2).all(|w| w[0].responder_id <= w[1].responder_id));
            for resp in &r {
                let d = snapshot.iter().find(|d| d.wire_id == resp.responder_id).unwrap();
                prop_assert_eq!(d.mode(), VisibilityMode::Discoverable);
                prop_assert!(resp.distance <= s.range());
            }
            for d in &snapshot {
                let reached = page(&s, d.desc.id, &snapshot, 0).unwrap().reached;
                let expect = d.powered && d.mode() != VisibilityMode::Off && d.position.x <= 100.0;
                prop_assert_eq!(reached, expect);
            }
            for d in &world {
                prop_assert_eq!(d.hit_counter() as usize, d.guest_book().len());
            }
        }
    }
}
