//! Sequential well placement for geological CO₂ storage under porosity
//! uncertainty.
//!
//! The crate is layered bottom-up:
//!
//! * [`geostat`] draws Gaussian porosity fields and conditions them on hard data.
//! * [`flowsim`] is a mass-conserving proxy for CO₂ injection and plume migration.
//! * [`pomdp`] wires the simulator into a decision process with three observation regimes.
//! * [`belief`] tracks an ensemble of porosity maps (kriging conditioning + ES-MDA).
//! * [`planner`] holds the POMCPOW tree search and the baseline policies behind a registry.
//! * [`harness`] runs episodes, aggregates metrics and writes experiment artifacts.

pub mod belief;
pub mod error;
pub mod flowsim;
pub mod geostat;
pub mod grid;
pub mod harness;
pub mod planner;
pub mod pomdp;
pub mod rng;

pub use error::{Error, Result};
pub use grid::{Cell, GridDims};
