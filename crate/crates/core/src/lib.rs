//! Trace-driven simulator for age-of-information (AoI) scheduling of sensors
//! sharing one channel, with an advantage actor-critic trainer and an
//! evaluation harness that compares learned policies against EDF and OSRP.
//!
//! Units are fixed crate-wide: time in milliseconds, sizes in bytes, rates in
//! bytes per millisecond (numerically equal to kB/s).

pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod schedulers;
pub mod traces;
pub mod train;

pub use error::{Error, Result};
