//! Device-side privacy policies: visibility schedules, seed-derived identifier
//! rotation with paired-peer resolution, a transmit range knob, and
//! friendly-name-only identification.

use thiserror::Error;

use crate::btstack::Tick;
use crate::model::{DeviceDescriptor, DeviceId, FriendlyName, VisibilityMode, MAX_NAME_CHARS};
use crate::rng::mix_once;

/// Separates self-assigned name suffixes from pseudonyms drawn from the same key.
const NAME_DOMAIN: u64 = 0x4E41_4D45_5F53_4658;
const RENAMING_DOMAIN: u64 = 0x5245_4E41_4D45_5345;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("epoch length must be at least 1 tick")]
    ZeroEpoch,
    #[error("range knob fraction {0} outside [0, 1]")]
    KnobOutOfRange(f64),
    #[error("visibility windows [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingWindows(Tick, Tick, Tick, Tick),
    #[error("visibility window [{0}, {1}) is empty")]
    EmptyWindow(Tick, Tick),
}

/// Renaming seed for a device whose policy names none.
pub fn derived_renaming_seed(id: DeviceId) -> u64 {
    mix_once(id.value() ^ RENAMING_DOMAIN)
}

/// Identifier the device presents during `epoch` of its rotation sequence.
pub fn pseudonym_at(seed: u64, epoch: u64) -> DeviceId {
    DeviceId::truncate(mix_once(seed ^ epoch))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenamingState {
    pub seed: u64,
    epoch_length: Tick,
}

impl RenamingState {
    pub fn new(seed: u64, epoch_length: Tick) -> Result<Self, PolicyError> {
        if epoch_length == 0 {
            return Err(PolicyError::ZeroEpoch);
        }
        Ok(Self { seed, epoch_length })
    }

    pub fn epoch_length(&self) -> Tick {
        self.epoch_length
    }

    pub fn epoch_at(&self, tick: Tick) -> u64 {
        tick / self.epoch_length
    }

    pub fn wire_id_at(&self, tick: Tick) -> DeviceId {
        pseudonym_at(self.seed, self.epoch_at(tick))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeKnob {
    fraction: f64,
}

impl RangeKnob {
    pub const FULL: RangeKnob = RangeKnob { fraction: 1.0 };

    pub fn new(fraction: f64) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(PolicyError::KnobOutOfRange(fraction));
        }
        Ok(Self { fraction })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }
}

impl Default for RangeKnob {
    fn default() -> Self {
        Self::FULL
    }
}

pub fn effective_range(base: f64, knob: RangeKnob) -> f64 {
    base * knob.fraction
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NameMode {
    #[default]
    StableId,
    FriendlyNameOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct NamePolicy {
    pub mode: NameMode,
    /// Self-assigned name period in ticks; 0 keeps the configured name.
    pub rename_period: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisibilityWindow {
    pub from: Tick,
    pub until: Tick,
    pub mode: VisibilityMode,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DevicePolicy {
    visibility: Vec<VisibilityWindow>,
    pub renaming: Option<RenamingState>,
    pub knob: RangeKnob,
    pub names: NamePolicy,
    /// Also rotate the friendly name on every renaming epoch.
    pub rotate_name: bool,
}

impl DevicePolicy {
    pub fn with_visibility(mut self, mut windows: Vec<VisibilityWindow>) -> Result<Self, PolicyError> {
        windows.sort_by_key(|w| (w.from, w.until));
        for w in &windows {
            if w.from >= w.until {
                return Err(PolicyError::EmptyWindow(w.from, w.until));
            }
        }
        for pair in windows.windows(2) {
            if pair[1].from < pair[0].until {
                return Err(PolicyError::OverlappingWindows(
                    pair[0].from,
                    pair[0].until,
                    pair[1].from,
                    pair[1].until,
                ));
            }
        }
        self.visibility = windows;
        Ok(self)
    }

    pub fn visibility(&self) -> &[VisibilityWindow] {
        &self.visibility
    }

    /// Scheduled mode at `tick`, or `base` outside every window.
    pub fn mode_at(&self, base: VisibilityMode, tick: Tick) -> VisibilityMode {
        self.visibility
            .iter()
            .find(|w| (w.from..w.until).contains(&tick))
            .map_or(base, |w| w.mode)
    }
}

/// Name with a 4-hex-digit suffix that changes every `period` ticks.
pub fn self_assigned_name(base: &FriendlyName, key: u64, period: Tick, tick: Tick) -> FriendlyName {
    if period == 0 {
        return base.clone();
    }
    rotated_name(base, key, tick / period)
}

fn rotated_name(base: &FriendlyName, key: u64, epoch: u64) -> FriendlyName {
    let suffix = mix_once(key ^ NAME_DOMAIN ^ epoch) & 0xFFFF;
    let stem: String = base.as_str().chars().take(MAX_NAME_CHARS - 5).collect();
    FriendlyName::new(format!("{stem}-{suffix:04X}")).expect("stem is truncated to fit")
}

/// What the device puts on the air at `tick`.
///
/// `identity_key` is the device's private per-run key, used for
/// friendly-name-only identifiers and self-assigned names; it is never shared
/// with peers (unlike a renaming seed).
pub fn current_wire_identity(
    desc: &DeviceDescriptor,
    policy: &DevicePolicy,
    identity_key: u64,
    tick: Tick,
) -> (DeviceId, FriendlyName) {
    let mut name = self_assigned_name(&desc.name, identity_key, policy.names.rename_period, tick);
    let id = match policy.names.mode {
        NameMode::FriendlyNameOnly => {
            let epoch_len = policy.renaming.map_or(1, |r| r.epoch_length());
            pseudonym_at(identity_key, tick / epoch_len)
        }
        NameMode::StableId => match &policy.renaming {
            Some(r) => {
                if policy.rotate_name {
                    name = rotated_name(&name, r.seed, r.epoch_at(tick));
                }
                r.wire_id_at(tick)
            }
            None => desc.id,
        },
    };
    (id, name)
}

/// The identifier a paired device must page to reach its peer at `tick`.
pub fn resolve_peer(pairing: &crate::btstack::PairingRecord, tick: Tick, epoch_length: Tick) -> DeviceId {
    pseudonym_at(pairing.peer_seed, tick / epoch_length.max(1))
}

/// How one side of a name-based pairing names itself over time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameSchedule {
    pub base: FriendlyName,
    pub key: u64,
    pub rename_period: Tick,
}

impl NameSchedule {
    pub fn name_at(&self, tick: Tick) -> FriendlyName {
        self_assigned_name(&self.base, self.key, self.rename_period, tick)
    }

    /// First tick in `(from, until]` at which the name differs from the name
    /// held at `from`.
    fn first_change(&self, from: Tick, until: Tick) -> Option<Tick> {
        if self.rename_period == 0 {
            return None;
        }
        let start = self.name_at(from);
        let mut boundary = (from / self.rename_period + 1) * self.rename_period;
        while boundary <= until {
            if self.name_at(boundary) != start {
                return Some(boundary);
            }
            boundary += self.rename_period;
        }
        None
    }
}

/// Pairing remembered by friendly names only, without a shared seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamePairing {
    pub local: NameSchedule,
    pub peer: NameSchedule,
    pub established: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingStatus {
    Valid,
    RequiresRediscovery { since: Tick },
}

/// A name-keyed pairing holds until either side's self-assigned name changes.
pub fn break_on_rename(pairing: &NamePairing, tick: Tick) -> PairingStatus {
    let changes = [
        pairing.local.first_change(pairing.established, tick),
        pairing.peer.first_change(pairing.established, tick),
    ];
    match changes.into_iter().flatten().min() {
        Some(since) => PairingStatus::RequiresRediscovery { since },
        None => PairingStatus::Valid,
    }
}
