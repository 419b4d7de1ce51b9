//! Orientation dynamics of a rigid permanently-magnetic swimmer in Stokes
//! flow under a steadily rotating uniform magnetic field.
//!
//! The crate provides:
//! - construction of the swimmer model from a 6x6 drag matrix and the
//!   singular structure of the torque map `P = M22 [m x]` ([`model`]),
//! - the governing ODE in three equivalent formulations and the quaternion
//!   parametrisation used for numerics ([`dynamics`]),
//! - an adaptive Dormand-Prince 5(4) integrator with dense output, events,
//!   and flow-map sensitivities ([`integrator`]),
//! - closed-form asymptotic predictions for low Mason number, high Mason
//!   number, and small conical angle ([`asymptotics`]),
//! - detection, shooting refinement, Floquet analysis, and pseudo-arclength
//!   continuation of periodic orbits ([`orbits`]),
//! - magnetic-frame curves, circle fitting, and analytic-vs-numeric error
//!   metrics ([`analysis`]),
//! - the command-line front end ([`cli`]).

pub mod analysis;
pub mod asymptotics;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod model;
pub mod orbits;

pub use error::{MagswimError, Result};
