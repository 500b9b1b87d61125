//! Characterization protocols run over the detector engine, and the
//! calibration routines that fit engine parameters to measured operating
//! points. Independent grid points run concurrently, each on a seed derived
//! from the master seed and its grid index, so results do not depend on
//! scheduling.

mod afterpulse;
mod calibrate;
mod dcr;
mod delay;
mod stability;

pub use afterpulse::{
    afterpulse_measurement, pap_vs_pde_curve, AfterpulseResult, AfterpulseSettings, Histogram,
    PapPoint, MIN_PHOTON_COUNTS,
};
pub use calibrate::{
    calibrate_dcr, calibrate_gate_width, calibrate_presets, calibrate_traps, reference_targets,
    CalibratedPreset, CalibratedTraps, DcrTargets, PresetTargets, TrapCalibration, TrapTarget,
};
pub use dcr::{dark_avalanche_rates, dcr_pde_curve, dcr_point, DcrCurve, DcrPdePoint};
pub use delay::{delay_scan, DelayScanResult, ScanMode, ScanSettings};
pub use stability::{stability_run, StabilitySeries, StabilitySettings};

use crate::engine::{
    CountsSummary, DetectorParams, GateClock, HoldOffPolicy, PhotonSource, RunOptions, Simulation,
};
use crate::error::Result;

pub(crate) fn run_counts(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    holdoff: &HoldOffPolicy,
    n_gates: u64,
    seed: u64,
    options: RunOptions,
) -> Result<CountsSummary> {
    Simulation {
        params,
        clock,
        source,
        holdoff,
        options,
    }
    .run(n_gates, seed, |_| Ok(()))
}

/// Recorded count rate in counts per second.
pub(crate) fn count_rate(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    holdoff: &HoldOffPolicy,
    n_gates: u64,
    seed: u64,
    options: RunOptions,
) -> Result<f64> {
    let summary = run_counts(params, clock, source, holdoff, n_gates, seed, options)?;
    Ok(summary.recorded.total() as f64 * clock.gate_freq_hz / n_gates as f64)
}
