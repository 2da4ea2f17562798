//! Simulation and analysis of passive Bluetooth tracking.
//!
//! [`sim`] drives a population of device-carrying people past fixed
//! scanners and emits a [`trace`]. The [`adversary`] module turns traces into
//! inferences and scores them against ground truth. [`countermeasures`]
//! implements the device-side defenses and [`csi`] covers privacy-preserving
//! storage of real-world logs.

pub mod adversary;
pub mod btstack;
pub mod countermeasures;
pub mod csi;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use btstack::Tick;
pub use model::{DeviceClass, DeviceDescriptor, DeviceId, FriendlyName, MajorClass, VisibilityMode};
pub use rng::SplitMix64;
