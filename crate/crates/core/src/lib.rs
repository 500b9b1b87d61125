//! Simulator of a 1.25 GHz sine-wave-gated InGaAs/InP single-photon detector
//! with a monolithic readout chain, and the characterization protocols used
//! to measure it.
//!
//! * [`chain`]: low-pass synthesis, S21, gated traces, discrimination.
//! * [`engine`]: per-gate stochastic avalanche model with count-off hold-off.
//! * [`experiments`]: delay scan, DCR/PDE, afterpulse, stability, calibration.
//! * [`io`]: presets, run configs, CSV/JSON outputs and protocol dispatch.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod io;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
