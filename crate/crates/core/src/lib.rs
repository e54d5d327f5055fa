//! Drive a periodic discrete Klein–Gordon lattice
//!
//!   ẍ_l = Δx(l) + (α − β ẋ_l²) ẋ_l + u_l,   |u_l| ≤ M,
//!
//! to a flock (every node moving at the same velocity) with bounded
//! feedback, and certify the run afterwards.
//!
//! - [`lattice`]: the discrete torus and its Laplacian.
//! - [`dynamics`]: the controlled ODE, RK4 and the energy V.
//! - [`controller`]: the feedback laws and the phase machine.
//! - [`verify`]: post-hoc certificates.
//! - [`hjb`]: minimal-time value function on small lattices.
//! - [`cli`]: config files, run orchestration and outputs.

pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod hjb;
pub mod lattice;
pub mod trajectory;
pub mod verify;

pub use controller::{
    run_mission, FlockKind, FlockTarget, MissionKind, MissionOptions, MissionResult, Phase, PhaseSchedule,
};
pub use dynamics::{ControlField, Params, State};
pub use error::{Error, Result};
pub use lattice::{LatticeSpec, NodeField};
pub use trajectory::{Sample, Trajectory};
