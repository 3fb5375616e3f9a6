//! Decentralized constraint-driven platoon formation on a single-lane highway.
//!
//! Every connected automated vehicle picks the minimum-norm acceleration that
//! satisfies its actuation and speed limits, a stopping-distance safety
//! constraint, a drag gradient-flow constraint and (optionally) a private
//! arrival deadline. Platoons emerge, split and merge from those local
//! decisions alone.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line driver live in the `platoon-cli` crate.
//!
//! Module map:
//!
//! - [`params`]: tunable constants, road geometry, validation.
//! - [`vehicle`]: vehicle state, controller modes, relative coordinates.
//! - [`drag`]: aerodynamic drag model, partial derivatives, gradient-flow bound.
//! - [`constraints`]: stopping margin, deadline margin, safe interval, infeasibility verdicts.
//! - [`controller`]: follower/leader control laws and the mode state machine.
//! - [`sim`]: open-system engine (spawning, integration, exits, resequencing).
//! - [`analysis`]: post-hoc metrics and brute-force oracles.
#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod constraints;
pub mod controller;
pub mod drag;
pub mod params;
pub mod sim;
pub mod vehicle;

pub use constraints::{FeasibilityVerdict, FeasibleInterval};
pub use controller::{ActiveConstraints, ControlDecision};
pub use drag::{DragCoefficients, DragModel, DragPartials};
pub use params::{PlatoonTolerance, PredAccelSource, RoadNetwork, SimParams, SpawnParams};
pub use sim::{Event, EventKind, RunOutput, SimError, TrajectoryRecord, WorldState};
pub use vehicle::{RelativeKinematics, VehicleId, VehicleMode, VehicleState};
